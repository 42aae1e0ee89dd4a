//! Coverage tables as CSV or Markdown.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::CoverageResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::InvalidArgument(format!(
                "unknown table format `{other}` (expected csv or markdown)"
            ))),
        }
    }
}

pub const COLUMNS: [&str; 9] = [
    "rho",
    "weights_label",
    "lr_coverage",
    "el_coverage",
    "reps",
    "lr_se",
    "el_se",
    "el_infeasible",
    "mle_failures",
];

fn cells(r: &CoverageResult) -> [String; 9] {
    let cov = |name: &str| {
        r.method(name)
            .map(|m| format!("{:.4}", m.coverage()))
            .unwrap_or_default()
    };
    let se = |name: &str| {
        r.method(name)
            .map(|m| format!("{:.4}", m.std_error()))
            .unwrap_or_default()
    };
    [
        format!("{}", r.rho),
        r.weights_label.clone(),
        cov("lr"),
        cov("el"),
        r.reps.to_string(),
        se("lr"),
        se("el"),
        r.el_infeasible.to_string(),
        r.mle_failures.to_string(),
    ]
}

/// Renders `results` in order. Each `header` line becomes a leading `# `
/// comment in CSV, or is dropped in Markdown.
pub fn emit_table(results: &[CoverageResult], format: TableFormat, header: &[String]) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            for h in header {
                for line in h.lines() {
                    let _ = writeln!(out, "# {line}");
                }
            }
            let _ = writeln!(out, "{}", COLUMNS.join(","));
            for r in results {
                let _ = writeln!(out, "{}", cells(r).join(","));
            }
        }
        TableFormat::Markdown => {
            let _ = writeln!(out, "| {} |", COLUMNS.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(COLUMNS.len()));
            for r in results {
                let _ = writeln!(out, "| {} |", cells(r).join(" | "));
            }
        }
    }
    out
}

pub fn write_table(path: &Path, results: &[CoverageResult], format: TableFormat, header: &[String]) -> Result<()> {
    Ok(crate::io::write_atomic(path, &emit_table(results, format, header))?)
}
