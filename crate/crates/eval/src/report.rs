use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

/// A labeled grid of numbers: each row carries `label_columns.len()` labels
/// and `value_columns.len()` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub label_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn new(label_columns: &[&str], value_columns: &[&str]) -> Self {
        Self {
            label_columns: label_columns.iter().map(|s| s.to_string()).collect(),
            value_columns: value_columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, labels: &[&str], values: Vec<f64>) {
        assert_eq!(labels.len(), self.label_columns.len(), "label count");
        assert_eq!(values.len(), self.value_columns.len(), "value count");
        self.rows.push(ReportRow {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            values,
        });
    }

    /// Number of numeric cells.
    pub fn cell_count(&self) -> usize {
        self.rows.iter().map(|r| r.values.len()).sum()
    }

    pub fn value(&self, labels: &[&str], column: &str) -> Option<f64> {
        let c = self.value_columns.iter().position(|v| v == column)?;
        self.rows
            .iter()
            .find(|r| r.labels.iter().map(String::as_str).eq(labels.iter().copied()))
            .map(|r| r.values[c])
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.label_columns.iter().chain(&self.value_columns))?;
        for r in &self.rows {
            let vals = r.values.iter().map(|v| v.to_string());
            w.write_record(r.labels.iter().cloned().chain(vals))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
