//! Evaluation reports: one row per configuration, one column per setting,
//! rendered as plain-text tables (one per metric) or JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub name: String,
    /// Metric means per column; `None` when the setting does not apply.
    pub cells: Vec<Option<BTreeMap<String, f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delta {
    pub name: String,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub title: String,
    pub metrics: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub deltas: Vec<Delta>,
    pub excluded_queries: Vec<String>,
}

fn display_metric(name: &str) -> String {
    match name.split_once('@') {
        Some(("ndcg", k)) => format!("NDCG@{k}"),
        Some(("recall", k)) => format!("Recall@{k}"),
        _ => name.to_string(),
    }
}

impl Report {
    pub fn new(title: String) -> Self {
        Self {
            title,
            metrics: Vec::new(),
            columns: Vec::new(),
            rows: Vec::new(),
            deltas: Vec::new(),
            excluded_queries: Vec::new(),
        }
    }

    pub fn value(&self, row: usize, column: &str, metric: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.get(row)?.cells.get(c)?.as_ref()?.get(metric).copied()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(["configuration".len()])
            .max()
            .unwrap_or(0);
        let col_w: Vec<usize> = self.columns.iter().map(|c| c.len().max(6)).collect();
        for metric in &self.metrics {
            let _ = writeln!(out, "\n{}", display_metric(metric));
            let mut header = format!("{:<name_w$}", "configuration");
            for (c, w) in self.columns.iter().zip(&col_w) {
                let _ = write!(header, " | {c:>w$}");
            }
            let _ = writeln!(out, "{header}");
            let _ = writeln!(out, "{}", "-".repeat(header.len()));
            for row in &self.rows {
                let _ = write!(out, "{:<name_w$}", row.name);
                for (cell, w) in row.cells.iter().zip(&col_w) {
                    match cell.as_ref().and_then(|m| m.get(metric)) {
                        Some(v) => {
                            let _ = write!(out, " | {v:>w$.4}");
                        }
                        None => {
                            let _ = write!(out, " | {:>w$}", "-");
                        }
                    }
                }
                out.push('\n');
            }
        }
        if !self.deltas.is_empty() {
            let _ = writeln!(out, "\ndeltas");
            for d in &self.deltas {
                let vals: Vec<String> = self
                    .metrics
                    .iter()
                    .filter_map(|m| d.values.get(m).map(|v| format!("{m} {v:+.4}")))
                    .collect();
                let _ = writeln!(out, "  {}: {}", d.name, vals.join(", "));
            }
        }
        if !self.excluded_queries.is_empty() {
            let _ = writeln!(
                out,
                "\n{} queries without relevant judgments excluded",
                self.excluded_queries.len()
            );
        }
        out
    }
}
