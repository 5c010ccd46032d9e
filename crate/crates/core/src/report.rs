//! Serialization of results: line-delimited JSON records and plain-text
//! summary tables.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;
use crate::experiment::{ContextRow, PromptCountRow};
use crate::metrics::{RetrievalReport, TtsReport};

/// One JSON object per line, newline-terminated.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Fixed-width table with a header rule. Columns are right-aligned except the
/// first.
pub fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(&mut headers.iter().copied());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
        out.push('\n');
    }
    out
}

fn f(v: f64) -> String {
    format!("{v:.4}")
}

pub fn retrieval_table(report: &RetrievalReport) -> String {
    table(
        &["queries", "SIM", "R@1", "R@5", "R@10", "mAP@10"],
        &[vec![
            report.queries.to_string(),
            f(report.sim),
            f(report.r_at_1),
            f(report.r_at_5),
            f(report.r_at_10),
            f(report.map_at_10),
        ]],
    )
}

pub fn tts_table(strategy: &str, report: &TtsReport) -> String {
    table(
        &["strategy", "items", "Energy", "F0", "MCD", "SECS"],
        &[vec![
            strategy.to_string(),
            report.len().to_string(),
            f(report.energy_rmse.mean),
            f(report.f0_rmse.mean),
            f(report.mcd.mean),
            f(report.secs.mean),
        ]],
    )
}

pub fn context_table(rows: &[ContextRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                f(r.report.sim),
                f(r.report.r_at_1),
                f(r.report.r_at_5),
                f(r.report.r_at_10),
                f(r.report.map_at_10),
            ]
        })
        .collect();
    table(&["l", "SIM", "R@1", "R@5", "R@10", "mAP@10"], &body)
}

pub fn prompt_count_table(rows: &[PromptCountRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.p.to_string(),
                r.strategy.to_string(),
                f(r.energy_rmse),
                f(r.f0_rmse),
                f(r.mcd),
                f(r.secs),
            ]
        })
        .collect();
    table(&["P", "strategy", "Energy", "F0", "MCD", "SECS"], &body)
}
