//! Candidate reports in line-oriented text and JSON.
//!
//! JSON field names:
//! - top level: `tool`, `version`, `format_version`, `tensors`
//! - per tensor: `name`, `shape`, `norm`, `min_flops_reduction`,
//!   `min_compression`, `rows`
//! - per row: `shape_a`, `shape_b`, `r_hat`, `params`, `compression`,
//!   `flops_reduction`, `relative_error`, `chosen`
//!
//! Rows are sorted best first (error, then params, then shapes) and
//! exactly one row per tensor has `chosen` set.

use std::fmt::Write as _;

use serde::Serialize;

use crate::complexity::ConfigCandidate;

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL: &str = "gkpd";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub shape_a: Vec<usize>,
    pub shape_b: Vec<usize>,
    pub r_hat: usize,
    pub params: u64,
    pub compression: f64,
    pub flops_reduction: f64,
    pub relative_error: f64,
    pub chosen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorReport {
    pub name: String,
    pub shape: Vec<usize>,
    pub norm: f64,
    pub min_flops_reduction: f64,
    pub min_compression: f64,
    pub rows: Vec<ReportRow>,
}

impl TensorReport {
    /// Rows from candidates already sorted by [`ConfigCandidate::order`];
    /// the first one is marked chosen.
    pub fn from_sorted(
        name: &str,
        shape: &[usize],
        norm: f64,
        min_flops_reduction: f64,
        min_compression: f64,
        candidates: &[ConfigCandidate],
    ) -> Self {
        let rows = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| ReportRow {
                shape_a: c.shape_a.clone(),
                shape_b: c.shape_b.clone(),
                r_hat: c.r_hat,
                params: c.params,
                compression: c.memory_reduction,
                flops_reduction: c.flops_reduction,
                relative_error: c.relative_error.unwrap_or(f64::NAN),
                chosen: i == 0,
            })
            .collect();
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            norm,
            min_flops_reduction,
            min_compression,
            rows,
        }
    }

    pub fn chosen(&self) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.chosen)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub format_version: u32,
    pub tensors: Vec<TensorReport>,
}

impl Report {
    pub fn new(tensors: Vec<TensorReport>) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            format_version: FORMAT_VERSION,
            tensors,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# {} report v{} ({} {})", self.tool, self.format_version, self.tool, self.version).unwrap();
        for t in &self.tensors {
            writeln!(
                s,
                "tensor {} shape={} norm={:.9e} min_flops_reduction={} min_compression={} candidates={}",
                t.name,
                join(&t.shape),
                t.norm,
                t.min_flops_reduction,
                t.min_compression,
                t.rows.len()
            )
            .unwrap();
            writeln!(
                s,
                "{:<14} {:<14} {:>5} {:>10} {:>12} {:>10} {:>16} {:>6}",
                "shape_a", "shape_b", "r_hat", "params", "compression", "flops_x", "rel_error", "chosen"
            )
            .unwrap();
            for r in &t.rows {
                writeln!(
                    s,
                    "{:<14} {:<14} {:>5} {:>10} {:>12.4} {:>10.4} {:>16.9e} {:>6}",
                    join(&r.shape_a),
                    join(&r.shape_b),
                    r.r_hat,
                    r.params,
                    r.compression,
                    r.flops_reduction,
                    r.relative_error,
                    if r.chosen { "*" } else { "" }
                )
                .unwrap();
            }
        }
        s
    }
}

pub fn join(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}
