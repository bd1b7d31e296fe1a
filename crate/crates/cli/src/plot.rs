//! `emit-plot-data`: CSV to whitespace-separated columns for gnuplot.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::run::{write_atomic, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlotKind {
    pub name: &'static str,
    pub columns: &'static [&'static str],
    /// Blank line whenever this column changes (gnuplot `splot` blocks).
    pub block_by: Option<&'static str>,
}

pub const KINDS: &[PlotKind] = &[
    PlotKind { name: "profile", columns: &["xi", "V"], block_by: None },
    PlotKind { name: "ladder", columns: &["eps", "defect"], block_by: None },
    PlotKind { name: "energy", columns: &["t", "E"], block_by: None },
    PlotKind { name: "field", columns: &["x", "t", "u"], block_by: Some("t") },
    PlotKind { name: "gamma", columns: &["x", "t"], block_by: None },
    PlotKind { name: "exercise", columns: &["tau", "s_star"], block_by: None },
    PlotKind { name: "smoothfit", columns: &["t", "x", "jump_r1"], block_by: None },
];

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("unknown plot kind `{0}` (expected one of {1})")]
    UnknownKind(String, String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Run(#[from] RunError),
}

impl PlotError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PlotError::UnknownKind(..) | PlotError::Format { .. } => 2,
            PlotError::Run(e) => e.exit_code(),
        }
    }
}

pub fn kind(name: &str) -> Result<PlotKind, PlotError> {
    KINDS
        .iter()
        .copied()
        .find(|k| k.name == name)
        .ok_or_else(|| PlotError::UnknownKind(name.into(), KINDS.iter().map(|k| k.name).collect::<Vec<_>>().join(", ")))
}

/// Converts `csv` and writes `<stem>.<kind>.dat` next to it (or to `out`).
pub fn emit(csv: &Path, kind_name: &str, out: Option<&Path>) -> Result<PathBuf, PlotError> {
    let kind = kind(kind_name)?;
    let text = fs::read_to_string(csv).map_err(|e| RunError::Io { path: csv.into(), source: e })?;
    let bad = |message: String| PlotError::Format { path: csv.into(), message };
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| bad(format!("missing column `{name}` (header: {})", header.join(","))))
    };
    let idx = kind.columns.iter().map(|c| col(c)).collect::<Result<Vec<_>, _>>()?;
    let block = kind.block_by.map(col).transpose()?;

    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(bad(format!("row {} has {} cells, header has {}", k + 1, cells.len(), header.len())));
        }
        rows.push(cells);
    }
    let target = match out {
        Some(p) => p.to_path_buf(),
        None => csv.with_extension(format!("{}.dat", kind.name)),
    };
    write_atomic(&target, |w: &mut dyn Write| {
        writeln!(w, "# {}", kind.columns.join(" "))?;
        let mut prev: Option<&str> = None;
        for cells in &rows {
            if let Some(b) = block {
                if prev.is_some_and(|p| p != cells[b]) {
                    writeln!(w)?;
                }
                prev = Some(cells[b]);
            }
            let vals: Vec<&str> = idx.iter().map(|&i| cells[i]).collect();
            writeln!(w, "{}", vals.join(" "))?;
        }
        Ok(())
    })?;
    Ok(target)
}
