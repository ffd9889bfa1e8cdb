//! Flat `key = value` experiment configs.
//!
//! ```text
//! # comment
//! experiment = aux-fig1
//! seed = 7
//! kappa = 5/3          # a/b is read as a real
//! lambdas = [0.5, 1, 5]
//! ```
//!
//! Values are integers, reals (including `a/b`), strings (bare or double
//! quoted) and bracketed lists of those. Every key must be known to the
//! chosen experiment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use super::experiments::Experiment;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Str(String),
    List(Vec<Value>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r:?}"),
            Value::Str(s) => write!(f, "{s}"),
            Value::List(items) => {
                write!(f, "[")?;
                for (k, v) in items.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
        }
    }
}

/// A problem found in a config file. `line` and `col` are 1-based; 0 means
/// the problem is not tied to a position (a missing key, say).
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub line: usize,
    pub col: usize,
    pub key: Option<String>,
    pub message: String,
}

impl Diagnostic {
    pub fn at(line: usize, col: usize, key: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            line,
            col,
            key: key.map(str::to_owned),
            message: message.into(),
        }
    }

    pub fn for_key(key: &str, message: impl Into<String>) -> Self {
        Self::at(0, 0, Some(key), message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}, col {}: ", self.line, self.col)?;
        }
        if let Some(k) = &self.key {
            write!(f, "`{k}`: ")?;
        }
        write!(f, "{}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: Value,
    pub line: usize,
    pub col: usize,
    pub value_col: usize,
}

fn parse_scalar(text: &str) -> std::result::Result<Value, String> {
    let t = text.trim();
    if t.is_empty() {
        return Err("empty value".into());
    }
    if let Some(inner) = t.strip_prefix('"') {
        return match inner.strip_suffix('"') {
            Some(s) if !s.contains('"') => Ok(Value::Str(s.to_owned())),
            _ => Err(format!("unterminated string {t}")),
        };
    }
    if let Ok(i) = t.parse::<i64>() {
        return Ok(Value::Int(i));
    }
    if let Ok(r) = t.parse::<f64>() {
        return if r.is_finite() {
            Ok(Value::Real(r))
        } else {
            Err(format!("non-finite number {t}"))
        };
    }
    if let Some((a, b)) = t.split_once('/') {
        if let (Ok(a), Ok(b)) = (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            if b == 0.0 {
                return Err(format!("division by zero in {t}"));
            }
            return Ok(Value::Real(a / b));
        }
    }
    if t.contains(['[', ']', ',', '=']) {
        return Err(format!("unexpected character in value {t}"));
    }
    Ok(Value::Str(t.to_owned()))
}

pub fn parse_value(text: &str) -> std::result::Result<Value, String> {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix('[') {
        let inner = rest
            .strip_suffix(']')
            .ok_or_else(|| format!("unterminated list {t}"))?;
        if inner.trim().is_empty() {
            return Ok(Value::List(Vec::new()));
        }
        return inner
            .split(',')
            .map(parse_scalar)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Value::List);
    }
    parse_scalar(t)
}

/// Splits the text into entries, reporting every malformed line and every
/// duplicate key.
pub fn parse_entries(text: &str) -> std::result::Result<Vec<Entry>, Vec<Diagnostic>> {
    let mut entries: Vec<Entry> = Vec::new();
    let mut diags = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        // '#' starts a comment outside quotes
        let mut in_quotes = false;
        let mut cut = raw.len();
        for (i, ch) in raw.char_indices() {
            match ch {
                '"' => in_quotes = !in_quotes,
                '#' if !in_quotes => {
                    cut = i;
                    break;
                }
                _ => {}
            }
        }
        let body = &raw[..cut];
        if body.trim().is_empty() {
            continue;
        }
        let indent = body.len() - body.trim_start().len();
        let Some(eq) = body.find('=') else {
            diags.push(Diagnostic::at(line, indent + 1, None, "expected `key = value`"));
            continue;
        };
        let key = body[..eq].trim();
        let vtext = &body[eq + 1..];
        let value_col = eq + 2 + (vtext.len() - vtext.trim_start().len());
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            diags.push(Diagnostic::at(line, indent + 1, None, format!("invalid key `{key}`")));
            continue;
        }
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            diags.push(Diagnostic::at(
                line,
                indent + 1,
                Some(key),
                format!("duplicate key (first set on line {})", prev.line),
            ));
            continue;
        }
        match parse_value(vtext) {
            Ok(value) => entries.push(Entry {
                key: key.to_owned(),
                value,
                line,
                col: indent + 1,
                value_col,
            }),
            Err(msg) => diags.push(Diagnostic::at(line, value_col, Some(key), msg)),
        }
    }
    if diags.is_empty() {
        Ok(entries)
    } else {
        Err(diags)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Int,
    Real,
    Str,
    IntList,
    RealList,
    StrList,
}

impl Kind {
    fn describe(self) -> &'static str {
        match self {
            Kind::Int => "an integer",
            Kind::Real => "a number",
            Kind::Str => "a string",
            Kind::IntList => "a list of integers",
            Kind::RealList => "a list of numbers",
            Kind::StrList => "a list of strings",
        }
    }

    /// Converts `v` to this kind, widening integers to reals.
    fn coerce(self, v: &Value) -> Option<Value> {
        let real = |v: &Value| match v {
            Value::Int(i) => Some(Value::Real(*i as f64)),
            Value::Real(r) => Some(Value::Real(*r)),
            _ => None,
        };
        let list = |v: &Value, f: &dyn Fn(&Value) -> Option<Value>| match v {
            Value::List(items) => items.iter().map(f).collect::<Option<Vec<_>>>().map(Value::List),
            _ => None,
        };
        let int = |v: &Value| matches!(v, Value::Int(_)).then(|| v.clone());
        let string = |v: &Value| match v {
            Value::Str(_) => Some(v.clone()),
            Value::Int(_) | Value::Real(_) => Some(Value::Str(v.to_string())),
            _ => None,
        };
        match self {
            Kind::Int => int(v),
            Kind::Real => real(v),
            Kind::Str => string(v),
            Kind::IntList => list(v, &int),
            Kind::RealList => list(v, &real),
            Kind::StrList => list(v, &string),
        }
    }
}

/// One documented key. `default` is config text; `None` marks an optional
/// key with no value.
#[derive(Debug, Clone, Copy)]
pub struct Param {
    pub key: &'static str,
    pub kind: Kind,
    pub default: Option<&'static str>,
    pub doc: &'static str,
}

pub const fn param(key: &'static str, kind: Kind, default: &'static str, doc: &'static str) -> Param {
    Param {
        key,
        kind,
        default: Some(default),
        doc,
    }
}

pub const fn optional(key: &'static str, kind: Kind, doc: &'static str) -> Param {
    Param {
        key,
        kind,
        default: None,
        doc,
    }
}

/// Keys every experiment accepts.
pub const COMMON: &[Param] = &[
    param("seed", Kind::Int, "0", "master seed; --seed overrides"),
    param("output_dir", Kind::Str, "results", "directory for CSV and sidecar; --out overrides"),
];

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub params: BTreeMap<String, Value>,
    /// Keys set in the file rather than by defaults.
    pub explicit: Vec<String>,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses and checks `text` against the experiment's schema. All
    /// problems are collected before returning.
    pub fn from_text(text: &str) -> std::result::Result<Self, Vec<Diagnostic>> {
        let entries = parse_entries(text)?;
        let mut diags = Vec::new();
        let experiment = match entries.iter().find(|e| e.key == "experiment") {
            None => return Err(vec![Diagnostic::for_key("experiment", "missing required key")]),
            Some(e) => match &e.value {
                Value::Str(name) => match Experiment::from_name(name) {
                    Some(x) => x,
                    None => {
                        return Err(vec![Diagnostic::at(
                            e.line,
                            e.value_col,
                            Some("experiment"),
                            format!(
                                "unknown experiment `{name}` (expected one of {})",
                                Experiment::ALL.iter().map(|x| x.name()).collect::<Vec<_>>().join(", ")
                            ),
                        )])
                    }
                },
                other => {
                    return Err(vec![Diagnostic::at(
                        e.line,
                        e.value_col,
                        Some("experiment"),
                        format!("expected an experiment name, got {other}"),
                    )])
                }
            },
        };
        let schema: Vec<Param> = COMMON.iter().chain(experiment.full_schema().iter()).copied().collect();
        let mut params = BTreeMap::new();
        let mut explicit = Vec::new();
        for e in entries.iter().filter(|e| e.key != "experiment") {
            let Some(p) = schema.iter().find(|p| p.key == e.key) else {
                diags.push(Diagnostic::at(
                    e.line,
                    e.col,
                    Some(&e.key),
                    format!("unknown key for experiment {}", experiment.name()),
                ));
                continue;
            };
            match p.kind.coerce(&e.value) {
                Some(v) => {
                    params.insert(e.key.clone(), v);
                    explicit.push(e.key.clone());
                }
                None => diags.push(Diagnostic::at(
                    e.line,
                    e.value_col,
                    Some(&e.key),
                    format!("expected {}, got {}", p.kind.describe(), e.value),
                )),
            }
        }
        for p in &schema {
            if params.contains_key(p.key) {
                continue;
            }
            if let Some(d) = p.default {
                let v = parse_value(d)
                    .ok()
                    .and_then(|v| p.kind.coerce(&v))
                    .expect("schema defaults parse");
                params.insert(p.key.to_owned(), v);
            }
        }
        let seed = match params.get("seed") {
            Some(Value::Int(s)) if *s >= 0 => *s as u64,
            _ => {
                diags.push(Diagnostic::for_key("seed", "seed must be a non-negative integer"));
                0
            }
        };
        let output_dir = match params.get("output_dir") {
            Some(Value::Str(s)) => PathBuf::from(s),
            _ => PathBuf::from("results"),
        };
        let mut cfg = ExperimentConfig {
            experiment,
            params,
            explicit,
            seed,
            output_dir,
        };
        // Keys with a type error hold their default here, so their semantic
        // checks would only repeat the same complaint.
        for mut d in cfg.experiment.check(&cfg) {
            if diags.iter().any(|x| x.key.is_some() && x.key == d.key) {
                continue;
            }
            if let Some(e) = entries.iter().find(|e| Some(&e.key) == d.key.as_ref()) {
                d.line = e.line;
                d.col = e.value_col;
            }
            diags.push(d);
        }
        if diags.is_empty() {
            cfg.params.remove("output_dir");
            Ok(cfg)
        } else {
            Err(diags)
        }
    }

    /// SHA-256 over the experiment name and the resolved parameters other
    /// than the seed and output location; first 16 hex digits.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.experiment.name().as_bytes());
        for (k, v) in &self.params {
            if k == "seed" {
                continue;
            }
            h.update(format!("\n{k}={v}").as_bytes());
        }
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.params.insert("seed".into(), Value::Int(seed as i64));
    }

    pub fn int(&self, key: &str) -> i64 {
        match self.params.get(key) {
            Some(Value::Int(i)) => *i,
            other => panic!("schema guarantees integer `{key}`, found {other:?}"),
        }
    }

    pub fn usize(&self, key: &str) -> usize {
        self.int(key).max(0) as usize
    }

    pub fn real(&self, key: &str) -> f64 {
        match self.params.get(key) {
            Some(Value::Real(r)) => *r,
            other => panic!("schema guarantees real `{key}`, found {other:?}"),
        }
    }

    pub fn string(&self, key: &str) -> Option<&str> {
        match self.params.get(key) {
            Some(Value::Str(s)) => Some(s),
            _ => None,
        }
    }

    pub fn reals(&self, key: &str) -> Vec<f64> {
        self.list(key)
            .iter()
            .map(|v| match v {
                Value::Real(r) => *r,
                other => panic!("schema guarantees reals in `{key}`, found {other:?}"),
            })
            .collect()
    }

    pub fn ints(&self, key: &str) -> Vec<i64> {
        self.list(key)
            .iter()
            .map(|v| match v {
                Value::Int(i) => *i,
                other => panic!("schema guarantees integers in `{key}`, found {other:?}"),
            })
            .collect()
    }

    pub fn strings(&self, key: &str) -> Vec<String> {
        self.list(key).iter().map(|v| v.to_string()).collect()
    }

    pub fn has(&self, key: &str) -> bool {
        self.params.contains_key(key)
    }

    fn list(&self, key: &str) -> &[Value] {
        match self.params.get(key) {
            Some(Value::List(items)) => items,
            Some(_) => panic!("schema guarantees list `{key}`"),
            None => &[],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_and_list_values() {
        assert_eq!(parse_value("12").unwrap(), Value::Int(12));
        assert_eq!(parse_value(" -0.5 ").unwrap(), Value::Real(-0.5));
        assert_eq!(parse_value("5/3").unwrap(), Value::Real(5.0 / 3.0));
        assert_eq!(parse_value("1e-3").unwrap(), Value::Real(1e-3));
        assert_eq!(parse_value("cross_entropy").unwrap(), Value::Str("cross_entropy".into()));
        assert_eq!(parse_value("\"a b\"").unwrap(), Value::Str("a b".into()));
        assert_eq!(
            parse_value("[1, 2.5, 1/4]").unwrap(),
            Value::List(vec![Value::Int(1), Value::Real(2.5), Value::Real(0.25)])
        );
        assert_eq!(parse_value("[]").unwrap(), Value::List(vec![]));
        assert!(parse_value("[1, 2").is_err());
        assert!(parse_value("1/0").is_err());
        assert!(parse_value("\"open").is_err());
    }

    #[test]
    fn entries_with_comments_and_positions() {
        let text = "# header\nexperiment = l1-phase  # trailing\n\n  trials = 5\n";
        let e = parse_entries(text).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[1].key, "trials");
        assert_eq!((e[1].line, e[1].col), (4, 3));
        assert_eq!(e[1].value_col, 12);
    }

    #[test]
    fn every_bad_line_is_reported() {
        let text = "experiment = l1-phase\nno equals here\ntrials = [1,\ntrials = 3\ntrials = 4\n";
        let d = parse_entries(text).unwrap_err();
        assert_eq!(d.len(), 3);
        assert_eq!(d[0].line, 2);
        assert_eq!(d[1].line, 3);
        assert!(d[2].message.contains("duplicate"));
        assert!(d[2].to_string().starts_with("line 5, col 1: `trials`"));
    }

    #[test]
    fn semantic_checks_point_at_the_value() {
        let text = "experiment = aux-fig1\nsigma = -1\np = x\n";
        let d = ExperimentConfig::from_text(text).unwrap_err();
        assert_eq!(d.len(), 2);
        let sigma = d.iter().find(|x| x.key.as_deref() == Some("sigma")).unwrap();
        assert_eq!((sigma.line, sigma.col), (2, 9));
        assert!(sigma.message.contains("sigma must be ≥ 0"));
    }

    #[test]
    fn unknown_keys_and_wrong_types_are_rejected() {
        let text = "experiment = l1-phase\nbogus = 1\ntrials = fast\nother = 2\n";
        let d = ExperimentConfig::from_text(text).unwrap_err();
        assert_eq!(d.len(), 3, "{d:?}");
        assert!(d.iter().any(|x| x.key.as_deref() == Some("bogus") && x.line == 2));
        assert!(d.iter().any(|x| x.key.as_deref() == Some("trials") && x.message.contains("integer")));
        assert!(ExperimentConfig::from_text("seed = 1\n").is_err());
        assert!(ExperimentConfig::from_text("experiment = nope\n").is_err());
    }

    #[test]
    fn defaults_fill_and_hash_ignores_seed() {
        let a = ExperimentConfig::from_text("experiment = ppls-bounds\n").unwrap();
        assert_eq!(a.usize("instances"), 20);
        assert!(a.explicit.is_empty());
        let mut b = ExperimentConfig::from_text("experiment = ppls-bounds\nseed = 9\noutput_dir = elsewhere\n").unwrap();
        assert_eq!(b.seed, 9);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        b.set_seed(3);
        assert_eq!(b.int("seed"), 3);
        let c = ExperimentConfig::from_text("experiment = ppls-bounds\ninstances = 3\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
