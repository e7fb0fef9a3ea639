use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::commands::Failure;

/// `score` and `aggregate` JSON: `scores[i]` belongs to `model_ids[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFile {
    pub method: String,
    pub model_ids: Vec<String>,
    pub scores: Vec<f64>,
}

/// `rank` JSON. `refreshed` lists the ids re-scored with their own features.
#[derive(Debug, Serialize)]
pub struct RankFile<'a> {
    pub k: usize,
    pub model_ids: &'a [String],
    pub scores: &'a [f64],
    pub refreshed: Vec<&'a str>,
}

/// `k-sweep` JSON rows.
#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub tau_w: f64,
}

/// Left-aligned text table with a header row.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

pub fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// Prints `text`, or writes it to `out` when given.
pub fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::io(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
