//! Command-line front end: `run` executes an experiment config and writes
//! its CSV plus a metadata sidecar; `validate` parses and checks a config
//! without running it.
//!
//! Config files are `key = value` lines. Values are integers, reals
//! (`5/3` is accepted), bare or quoted strings, or bracketed lists. `#`
//! starts a comment.

pub mod config;
pub mod experiments;
pub mod table;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

pub use config::{Diagnostic, ExperimentConfig};
pub use experiments::Experiment;
pub use table::{Cell, ResultTable};

/// Exit status for configs that fail to parse or validate.
pub const EXIT_INVALID_CONFIG: u8 = 2;
/// Exit status for runtime failures.
pub const EXIT_RUN_FAILED: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "prune-lab", version, about = "Run pruning and importance experiments from config files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment and write <experiment>.csv and <experiment>.meta.txt
    Run {
        config: PathBuf,
        /// Worker threads
        #[arg(long, env = "PRUNE_LAB_JOBS")]
        jobs: Option<usize>,
        /// Overrides the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output_dir
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and print derived quantities
    Validate { config: PathBuf },
}

/// Every experiment's keys, defaults and meaning, for `--help`.
pub fn schema_help() -> String {
    let mut s = String::from("Experiments and config keys (default in brackets):\n");
    for e in Experiment::ALL {
        let _ = writeln!(s, "\n  experiment = {}", e.name());
        for p in config::COMMON.iter().chain(e.full_schema().iter()) {
            let d = p.default.unwrap_or("unset");
            let _ = writeln!(s, "    {:<24} [{}] {}", p.key, d, p.doc);
        }
    }
    s
}

/// Reads and checks a config file. Diagnostics carry line and column.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![Diagnostic::at(0, 0, None, format!("cannot read {}: {e}", path.display()))])?;
    ExperimentConfig::from_text(&text)
}

/// Runs `cfg` on a pool of `jobs` threads (all cores when `None`).
/// Results do not depend on `jobs`.
pub fn execute(cfg: &ExperimentConfig, jobs: Option<usize>) -> crate::Result<ResultTable> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| crate::Error::Unsupported(format!("thread pool: {e}")))?;
    pool.install(|| cfg.experiment.run(cfg))
}

/// Runs `cfg` and writes the table and sidecar into `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, jobs: Option<usize>, dir: &Path) -> crate::Result<(PathBuf, PathBuf)> {
    let start = Instant::now();
    let table = execute(cfg, jobs)?;
    let meta = [
        ("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64())),
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("jobs", jobs.map_or("auto".into(), |j| j.to_string())),
        (
            "params",
            cfg.params
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join("; "),
        ),
    ];
    table.write(dir, &meta)
}

fn report(path: &Path, diags: &[Diagnostic]) {
    for d in diags {
        eprintln!("{}: {d}", path.display());
    }
}

/// Entry point shared by the binary; `args` includes the program name.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match Cli::command().after_long_help(schema_help()).try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INVALID_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_INVALID_CONFIG);
        }
    };
    match cli.command {
        Command::Validate { config } => match load_config(&config) {
            Ok(cfg) => {
                println!("{}: ok ({})", config.display(), cfg.experiment.name());
                println!("config hash {}", cfg.hash());
                for line in cfg.experiment.derived(&cfg) {
                    println!("  {line}");
                }
                ExitCode::SUCCESS
            }
            Err(diags) => {
                report(&config, &diags);
                ExitCode::from(EXIT_INVALID_CONFIG)
            }
        },
        Command::Run {
            config,
            jobs,
            seed,
            out,
        } => {
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(diags) => {
                    report(&config, &diags);
                    return ExitCode::from(EXIT_INVALID_CONFIG);
                }
            };
            if let Some(s) = seed {
                cfg.set_seed(s);
            }
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            log::info!("running {} (hash {}, seed {})", cfg.experiment.name(), cfg.hash(), cfg.seed);
            match run_to_dir(&cfg, jobs, &dir) {
                Ok((csv, _)) => {
                    println!("{}", csv.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{}: {} failed: {e}", config.display(), cfg.experiment.name());
                    ExitCode::from(EXIT_RUN_FAILED)
                }
            }
        }
    }
}
