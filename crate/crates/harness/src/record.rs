//! Result records and their CSV / JSON serialization.
//!
//! A record holds a parameter echo, a fixed column list, per-point rows,
//! summary statistics and verdicts. Wall-clock data is kept out of the record
//! and written to a `<out>.meta.json` side file so data files are
//! byte-reproducible.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Real(f64),
    Int(i64),
    Text(String),
    Flag(bool),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Real(v) if v.is_nan() => "NaN".into(),
            Cell::Real(v) => format!("{v:.16e}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Flag(b) => b.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Real(v) => serde_json::Number::from_f64(*v).map(Value::Number).unwrap_or(Value::Null),
            Cell::Int(v) => Value::from(*v),
            Cell::Text(s) => Value::from(s.clone()),
            Cell::Flag(b) => Value::from(*b),
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_flag(&self) -> Option<bool> {
        match self {
            Cell::Flag(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Cell::Real(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Flag(v)
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

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub experiment: String,
    pub version: String,
    pub params: BTreeMap<String, Value>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub summary: BTreeMap<String, Value>,
    pub verdicts: Vec<Verdict>,
}

impl ResultRecord {
    pub fn new(experiment: &str, params: BTreeMap<String, Value>, columns: &[&str]) -> Self {
        Self {
            experiment: experiment.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            params,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            summary: BTreeMap::new(),
            verdicts: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[k]).collect())
    }

    pub fn reals(&self, name: &str) -> Vec<f64> {
        self.column(name)
            .map(|c| c.into_iter().map(|v| v.as_real().unwrap_or(f64::NAN)).collect())
            .unwrap_or_default()
    }

    pub fn texts(&self, name: &str) -> Vec<String> {
        self.column(name)
            .map(|c| c.into_iter().map(|v| v.as_text().unwrap_or("").to_string()).collect())
            .unwrap_or_default()
    }

    pub fn flags(&self, name: &str) -> Vec<bool> {
        self.column(name)
            .map(|c| c.into_iter().map(|v| v.as_flag().unwrap_or(false)).collect())
            .unwrap_or_default()
    }

    pub fn summary_f64(&self, key: &str) -> Option<f64> {
        self.summary.get(key).and_then(Value::as_f64)
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn summary_line(&self) -> String {
        let failed: Vec<&str> =
            self.verdicts.iter().filter(|v| !v.pass).map(|v| v.name.as_str()).collect();
        if failed.is_empty() {
            format!(
                "{}: {} rows, {} verdicts, all checks passed",
                self.experiment,
                self.rows.len(),
                self.verdicts.len()
            )
        } else {
            format!(
                "{}: {} rows, {} of {} verdicts failed: {}",
                self.experiment,
                self.rows.len(),
                failed.len(),
                self.verdicts.len(),
                failed.join(", ")
            )
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(out, self)
    }

    /// Record without rows: the companion of a CSV data file.
    pub fn header_json(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("record serializes");
        if let Value::Object(m) = &mut v {
            m.remove("rows");
        }
        v
    }
}

impl Serialize for ResultRecord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Map<String, Value>> = self
            .rows
            .iter()
            .map(|r| self.columns.iter().cloned().zip(r.iter().map(Cell::json)).collect())
            .collect();
        let mut m = s.serialize_map(Some(7))?;
        m.serialize_entry("experiment", &self.experiment)?;
        m.serialize_entry("version", &self.version)?;
        m.serialize_entry("params", &self.params)?;
        m.serialize_entry("columns", &self.columns)?;
        m.serialize_entry("rows", &rows)?;
        m.serialize_entry("summary", &self.summary)?;
        m.serialize_entry("verdicts", &self.verdicts)?;
        m.end()
    }
}

/// Reads a CSV data file back into columns and typed cells.
pub fn read_csv<R: std::io::Read>(input: R) -> csv::Result<(Vec<String>, Vec<Vec<Cell>>)> {
    let mut r = csv::Reader::from_reader(input);
    let columns = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(parse_cell).collect());
    }
    Ok((columns, rows))
}

fn parse_cell(s: &str) -> Cell {
    match s {
        "true" => Cell::Flag(true),
        "false" => Cell::Flag(false),
        "NaN" => Cell::Real(f64::NAN),
        _ => s
            .parse::<i64>()
            .map(Cell::Int)
            .or_else(|_| s.parse::<f64>().map(Cell::Real))
            .unwrap_or_else(|_| Cell::Text(s.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Writes the data file and, next to it, `<path>.meta.json`.
///
/// For CSV the parameter echo, summary and verdicts go to
/// `<path>.record.json` since CSV has no room for them.
pub fn persist(record: &ResultRecord, path: &Path, format: Format, wall_clock_s: f64) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        Format::Csv => {
            record.write_csv(file).map_err(std::io::Error::other)?;
            let side = with_suffix(path, ".record.json");
            std::fs::write(side, serde_json::to_string_pretty(&record.header_json())? + "\n")?;
        }
        Format::Json => {
            let mut file = file;
            record.write_json(&mut file)?;
            file.write_all(b"\n")?;
        }
    }
    let started = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "experiment": record.experiment,
        "wall_clock_seconds": wall_clock_s,
        "finished_unix": started,
        "threads": rayon::current_num_threads(),
    });
    std::fs::write(with_suffix(path, ".meta.json"), serde_json::to_string_pretty(&meta)? + "\n")
}

pub fn with_suffix(path: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}
