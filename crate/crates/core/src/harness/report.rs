//! Bit-stable report serialization.
//!
//! Numbers are rounded to 12 significant digits before they are written, keys
//! are sorted, and big integers are written as decimal strings so nothing is
//! lost to `f64`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use num_bigint::BigUint;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::numeric::round_sig12;

/// One scalar or list entry of a report record.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Int(i64),
    Float(f64),
    Text(String),
    Big(BigUint),
    Bool(bool),
    Floats(Vec<f64>),
    Missing,
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Float(v)
    }
}

impl From<u64> for Field {
    fn from(v: u64) -> Self {
        Field::Int(v as i64)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as i64)
    }
}

impl From<bool> for Field {
    fn from(v: bool) -> Self {
        Field::Bool(v)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.to_string())
    }
}

impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::Text(v)
    }
}

impl From<BigUint> for Field {
    fn from(v: BigUint) -> Self {
        Field::Big(v)
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Field::Floats(v)
    }
}

impl<T: Into<Field>> From<Option<T>> for Field {
    fn from(v: Option<T>) -> Self {
        v.map_or(Field::Missing, Into::into)
    }
}

fn float_json(x: f64) -> Value {
    let r = round_sig12(x);
    serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number)
}

/// Shortest text that reparses to the 12-digit rounding of `x`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        let r = round_sig12(x);
        if r != 0.0 && !(1e-6..1e15).contains(&r.abs()) {
            format!("{r:e}")
        } else {
            format!("{r}")
        }
    }
}

impl Field {
    fn to_json(&self) -> Value {
        match self {
            Field::Int(v) => Value::from(*v),
            Field::Float(v) => float_json(*v),
            Field::Text(s) => Value::String(s.clone()),
            Field::Big(b) => Value::String(b.to_str_radix(10)),
            Field::Bool(b) => Value::Bool(*b),
            Field::Floats(v) => Value::Array(v.iter().map(|x| float_json(*x)).collect()),
            Field::Missing => Value::Null,
        }
    }

    fn to_csv(&self) -> String {
        match self {
            Field::Int(v) => v.to_string(),
            Field::Float(v) => format_float(*v),
            Field::Text(s) => s.clone(),
            Field::Big(b) => b.to_str_radix(10),
            Field::Bool(b) => b.to_string(),
            Field::Floats(v) => v.iter().map(|x| format_float(*x)).collect::<Vec<_>>().join(";"),
            Field::Missing => String::new(),
        }
    }
}

/// A flat record with sorted keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record(pub BTreeMap<String, Field>);

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl Into<Field>) -> Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&Field> {
        self.0.get(key)
    }

    fn to_json(&self) -> Value {
        Value::Object(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), v.to_json()))
                .collect::<Map<_, _>>(),
        )
    }
}

/// Either one flat object or a table of rows with fixed columns.
#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Single(Record),
    Table {
        title: String,
        columns: Vec<String>,
        rows: Vec<Record>,
        summary: Record,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl Report {
    pub fn table(title: &str, columns: &[&str]) -> Self {
        Report::Table {
            title: title.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            summary: Record::new(),
        }
    }

    pub fn to_json_value(&self) -> Value {
        match self {
            Report::Single(r) => r.to_json(),
            Report::Table {
                title, rows, summary, ..
            } => {
                let mut map = Map::new();
                map.insert(
                    "rows".into(),
                    Value::Array(rows.iter().map(Record::to_json).collect()),
                );
                map.insert("summary".into(), summary.to_json());
                map.insert("title".into(), Value::String(title.clone()));
                Value::Object(map)
            }
        }
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json_value()).expect("json values serialize");
        s.push('\n');
        s
    }

    pub fn to_csv_string(&self) -> String {
        let (columns, rows): (Vec<String>, Vec<&Record>) = match self {
            Report::Single(r) => (r.0.keys().cloned().collect(), vec![r]),
            Report::Table { columns, rows, .. } => (columns.clone(), rows.iter().collect()),
        };
        let mut out = columns.join(",");
        out.push('\n');
        for row in rows {
            let line: Vec<String> = columns
                .iter()
                .map(|c| row.get(c).map_or_else(String::new, Field::to_csv))
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => self.to_json_string(),
            Format::Csv => self.to_csv_string(),
        }
    }
}

/// Write `report` to `path` (or stdout for `-`).
pub fn emit_report(report: &Report, path: &Path, format: Format) -> Result<()> {
    let text = report.render(format);
    if path.as_os_str() == "-" {
        std::io::stdout().write_all(text.as_bytes())?;
        return Ok(());
    }
    std::fs::write(path, text).map_err(Error::Io)
}
