//! Scalar telemetry tables and their CSV form.
//!
//! A table has a fixed column set. On disk it is a CSV file whose first column is `step`;
//! values are written with 17 significant digits so that reading them back reproduces
//! the exact bit pattern.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    columns: Vec<String>,
    records: Vec<MetricsRecord>,
}

impl MetricsTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            records: Vec::new(),
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a row; the value count must match the column set.
    pub fn push(&mut self, step: u64, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::structural(format!(
                "metrics row has {} values for {} columns",
                values.len(),
                self.columns.len()
            )));
        }
        self.records.push(MetricsRecord { step, values });
        Ok(())
    }

    pub fn extend(&mut self, other: MetricsTable) -> Result<()> {
        if other.columns != self.columns {
            return Err(Error::structural("cannot merge metrics tables with different columns"));
        }
        self.records.extend(other.records);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.records.iter().map(|r| r.values[idx]).collect())
    }
}

fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_metrics(table: &MetricsTable, path: &Path) -> Result<()> {
    for r in &table.records {
        if let Some(i) = r.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMetric {
                column: table.columns[i].clone(),
                step: r.step,
            });
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut header = vec!["step".to_owned()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for r in &table.records {
        let mut row = vec![r.step.to_string()];
        row.extend(r.values.iter().map(|&v| format_value(v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    let mut file = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    file.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<MetricsTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(file);
    let bad = |row: usize, message: String| Error::MetricsFormat {
        path: path.to_owned(),
        row,
        message,
    };
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h.map_err(|e| bad(1, e.to_string()))?,
        None => return Err(bad(1, "missing header".into())),
    };
    if header.get(0) != Some("step") {
        return Err(bad(1, "first column must be `step`".into()));
    }
    let mut table = MetricsTable::new(header.iter().skip(1).map(str::to_owned).collect());
    for (i, rec) in rows.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| bad(row, e.to_string()))?;
        if rec.len() != table.columns.len() + 1 {
            return Err(bad(row, format!("expected {} fields, found {}", table.columns.len() + 1, rec.len())));
        }
        let step = rec[0].parse::<u64>().map_err(|e| bad(row, format!("step: {e}")))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| bad(row, format!("`{s}`: {e}")))
                    .and_then(|v| if v.is_finite() { Ok(v) } else { Err(bad(row, format!("non-finite value `{s}`"))) })
            })
            .collect::<Result<Vec<_>>>()?;
        table.records.push(MetricsRecord { step, values });
    }
    Ok(table)
}
