//! Result tables and their CSV and sidecar encodings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Str(String),
    Bool(bool),
    Missing,
}

impl Cell {
    /// Reals use 17 significant digits so the text round-trips exactly.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Real(r) if r.is_nan() => "NaN".into(),
            Cell::Real(r) if r.is_infinite() => if *r > 0.0 { "inf" } else { "-inf" }.into(),
            Cell::Real(r) => format!("{r:.16e}"),
            Cell::Str(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Missing => "NA".into(),
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Cell::Real(r) => Some(*r),
            Cell::Int(i) => Some(*i as f64),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Str(v.to_owned())
    }
}

impl From<Option<bool>> for Cell {
    fn from(v: Option<bool>) -> Self {
        v.map_or(Cell::Missing, Cell::Bool)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub cell: usize,
    pub values: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub experiment: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Row>,
    pub config_hash: String,
    pub seed: u64,
}

impl ResultTable {
    pub fn new(experiment: &str, columns: &[&'static str]) -> Self {
        Self {
            experiment: experiment.to_owned(),
            columns: columns.to_vec(),
            rows: Vec::new(),
            config_hash: String::new(),
            seed: 0,
        }
    }

    pub fn push(&mut self, cell: usize, values: Vec<Cell>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                expected: self.columns.len(),
                got: values.len(),
            });
        }
        self.rows.push(Row { cell, values });
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| *c == name)
    }

    /// Values of one column, by name.
    pub fn get(&self, name: &str) -> Vec<&Cell> {
        let k = self.column(name).unwrap_or_else(|| panic!("no column {name}"));
        self.rows.iter().map(|r| &r.values[k]).collect()
    }

    /// Header plus rows, each prefixed by config hash, seed and cell index.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config_hash,seed,cell");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", self.config_hash, self.seed, r.cell);
            for v in &r.values {
                out.push(',');
                out.push_str(&v.render());
            }
            out.push('\n');
        }
        out
    }

    /// Writes `<experiment>.csv` and `<experiment>.meta.txt` into `dir`.
    pub fn write(&self, dir: &Path, meta: &[(&str, String)]) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{}.csv", self.experiment));
        std::fs::write(&csv, self.to_csv())?;
        let mut text = String::new();
        let _ = writeln!(text, "experiment: {}", self.experiment);
        let _ = writeln!(text, "config_hash: {}", self.config_hash);
        let _ = writeln!(text, "seed: {}", self.seed);
        let _ = writeln!(text, "rows: {}", self.rows.len());
        let _ = writeln!(text, "columns: {}", self.columns.join(" "));
        for (k, v) in meta {
            let _ = writeln!(text, "{k}: {v}");
        }
        let sidecar = dir.join(format!("{}.meta.txt", self.experiment));
        std::fs::write(&sidecar, text)?;
        Ok((csv, sidecar))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123456789.12345679] {
            let s = Cell::Real(v).render();
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(Cell::Missing.render(), "NA");
        assert_eq!(Cell::Real(f64::NAN).render(), "NaN");
    }

    #[test]
    fn csv_layout() {
        let mut t = ResultTable::new("demo", &["x", "ok"]);
        t.config_hash = "abc".into();
        t.seed = 4;
        t.push(0, vec![1.5.into(), true.into()]).unwrap();
        t.push(1, vec![Cell::Int(2), Cell::Missing]).unwrap();
        assert!(t.push(2, vec![Cell::Int(1)]).is_err());
        assert_eq!(
            t.to_csv(),
            "config_hash,seed,cell,x,ok\nabc,4,0,1.5000000000000000e0,true\nabc,4,1,2,NA\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let (csv, meta) = t.write(dir.path(), &[("wall_time_s", "0.1".into())]).unwrap();
        assert_eq!(std::fs::read_to_string(csv).unwrap(), t.to_csv());
        assert!(std::fs::read_to_string(meta).unwrap().contains("config_hash: abc"));
    }
}
