//! Report rendering. JSON reports wrap the records in a versioned envelope;
//! CSV reports are one header line plus one line per record.

use crate::config::{Format, Units};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA: &str = "entroscope/1";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unsupported schema {0:?}")]
    Schema(String),
}

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    fn scaled(self, factor: f64) -> Cell {
        match self {
            Cell::Float(v) => Cell::Float(v * factor),
            other => other,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            // 17 significant digits
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// A flat report row.
pub trait Record: Serialize {
    fn columns() -> &'static [&'static str];
    fn cells(&self) -> Vec<Cell>;
    /// Entropy-valued fields, rescaled by `--bits`.
    fn nats_fields() -> &'static [&'static str] {
        &[]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<R> {
    pub schema: String,
    pub command: String,
    pub units: Units,
    pub records: Vec<R>,
}

fn factor(units: Units) -> f64 {
    match units {
        Units::Nats => 1.0,
        Units::Bits => 1.0 / std::f64::consts::LN_2,
    }
}

fn render_json<R: Record>(command: &str, records: &[R], units: Units) -> Result<String, ReportError> {
    let k = factor(units);
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let mut v = serde_json::to_value(r)?;
        if let Value::Object(map) = &mut v {
            for &name in R::nats_fields() {
                if let Some(x) = map.get(name).and_then(Value::as_f64) {
                    map.insert(name.to_string(), Value::from(x * k));
                }
            }
        }
        rows.push(v);
    }
    let envelope = Envelope {
        schema: SCHEMA.to_string(),
        command: command.to_string(),
        units,
        records: rows,
    };
    let mut text = serde_json::to_string_pretty(&envelope)?;
    text.push('\n');
    Ok(text)
}

fn render_csv<R: Record>(records: &[R], units: Units) -> Result<String, ReportError> {
    let k = factor(units);
    let columns = R::columns();
    let scaled: Vec<bool> = columns.iter().map(|c| R::nats_fields().contains(c)).collect();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(columns)?;
    for r in records {
        let cells = r.cells();
        debug_assert_eq!(cells.len(), columns.len());
        let row: Vec<String> = cells
            .into_iter()
            .zip(&scaled)
            .map(|(c, &s)| if s { c.scaled(k) } else { c }.render())
            .collect();
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Io {
        path: PathBuf::from("<memory>"),
        source: e.into_error(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render<R: Record>(command: &str, records: &[R], format: Format, units: Units) -> Result<String, ReportError> {
    match format {
        Format::Json => render_json(command, records, units),
        Format::Csv => render_csv(records, units),
    }
}

/// Renders the report and writes it to `path` when one is given.
pub fn emit_report<R: Record>(
    command: &str,
    records: &[R],
    format: Format,
    units: Units,
    path: Option<&Path>,
) -> Result<String, ReportError> {
    let text = render(command, records, format, units)?;
    if let Some(path) = path {
        std::fs::write(path, &text).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    Ok(text)
}

/// Parses a JSON report produced by [`emit_report`].
pub fn parse_json<R: DeserializeOwned>(text: &str) -> Result<Envelope<R>, ReportError> {
    let envelope: Envelope<R> = serde_json::from_str(text)?;
    if envelope.schema != SCHEMA {
        return Err(ReportError::Schema(envelope.schema));
    }
    Ok(envelope)
}

/// Measured range of one check against optional bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub cases: usize,
    /// `None` when the sample was empty or held a non-finite value.
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub passed: bool,
}

impl CheckRecord {
    /// Passes when every value lies within the bounds. An empty or
    /// non-finite sample fails.
    pub fn from_values(check: &str, values: &[f64], lower: Option<f64>, upper: Option<f64>) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let finite = !values.is_empty() && values.iter().all(|v| v.is_finite());
        let passed = finite && lower.is_none_or(|l| min >= l) && upper.is_none_or(|u| max <= u);
        CheckRecord {
            check: check.to_string(),
            cases: values.len(),
            min: finite.then_some(min),
            max: finite.then_some(max),
            lower,
            upper,
            passed,
        }
    }

    pub fn summary_line(&self) -> String {
        let bounds = match (self.lower, self.upper) {
            (Some(l), Some(u)) => format!("[{l:e}, {u:e}]"),
            (Some(l), None) => format!(">= {l:e}"),
            (None, Some(u)) => format!("<= {u:e}"),
            (None, None) => String::new(),
        };
        let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:e}"));
        format!(
            "{} {} cases={} min={} max={} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.check,
            self.cases,
            show(self.min),
            show(self.max),
            bounds
        )
    }
}

impl Record for CheckRecord {
    fn columns() -> &'static [&'static str] {
        &["check", "cases", "min", "max", "lower", "upper", "passed"]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![
            self.check.as_str().into(),
            self.cases.into(),
            self.min.into(),
            self.max.into(),
            self.lower.into(),
            self.upper.into(),
            self.passed.into(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Row {
        name: String,
        value: f64,
        count: usize,
    }

    impl Record for Row {
        fn columns() -> &'static [&'static str] {
            &["name", "value", "count"]
        }
        fn cells(&self) -> Vec<Cell> {
            vec![self.name.as_str().into(), self.value.into(), self.count.into()]
        }
        fn nats_fields() -> &'static [&'static str] {
            &["value"]
        }
    }

    fn rows() -> Vec<Row> {
        vec![
            Row {
                name: "a,b".into(),
                value: std::f64::consts::LN_2,
                count: 3,
            },
            Row {
                name: "c".into(),
                value: 0.1,
                count: 0,
            },
        ]
    }

    #[test]
    fn empty_report_has_schema() {
        let text = render::<Row>("validate", &[], Format::Json, Units::Nats).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema"], SCHEMA);
        assert_eq!(v["records"].as_array().unwrap().len(), 0);
        let csv = render::<Row>("validate", &[], Format::Csv, Units::Nats).unwrap();
        assert_eq!(csv, "name,value,count\n");
    }

    #[test]
    fn json_round_trip_and_field_order() {
        let text = render("x", &rows(), Format::Json, Units::Nats).unwrap();
        let back: Envelope<Row> = parse_json(&text).unwrap();
        assert_eq!(back.records, rows());
        let name = text.find("\"name\"").unwrap();
        let value = text.find("\"value\"").unwrap();
        assert!(name < value);
        assert!(text.find("\"schema\"").unwrap() < text.find("\"records\"").unwrap());
    }

    #[test]
    fn csv_rendering_and_bits() {
        let text = render("x", &rows(), Format::Csv, Units::Bits).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "name,value,count");
        assert_eq!(lines[1], "\"a,b\",1.0000000000000000e0,3");
        let nats = render("x", &rows(), Format::Csv, Units::Nats).unwrap();
        assert!(nats.contains("1.0000000000000001e-1"));
        let json = render("x", &rows(), Format::Json, Units::Bits).unwrap();
        let back: Envelope<Row> = parse_json(&json).unwrap();
        assert_eq!(back.units, Units::Bits);
        assert!((back.records[0].value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn writes_and_reports_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let a = emit_report("x", &rows(), Format::Json, Units::Nats, Some(&path)).unwrap();
        let b = emit_report("x", &rows(), Format::Json, Units::Nats, Some(&path)).unwrap();
        assert_eq!(a, b);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), a);
        let missing = dir.path().join("no/such/dir/r.json");
        let err = emit_report("x", &rows(), Format::Json, Units::Nats, Some(&missing)).unwrap_err();
        assert!(err.to_string().contains("no/such/dir"));
    }

    #[test]
    fn check_bounds() {
        assert!(CheckRecord::from_values("c", &[1.0, 2.0], Some(0.5), Some(2.0)).passed);
        assert!(!CheckRecord::from_values("c", &[1.0, 2.5], Some(0.5), Some(2.0)).passed);
        assert!(!CheckRecord::from_values("c", &[], None, Some(2.0)).passed);
        assert!(!CheckRecord::from_values("c", &[f64::NAN], None, None).passed);
    }
}
