use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::SweepRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Structured,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "structured" | "json" => Ok(ReportFormat::Structured),
            _ => Err(Error::param(format!("unknown report format {s:?}"))),
        }
    }
}

const HEADER: [&str; 5] = ["setting", "method", "dim", "ACC (%)", "time (ms)"];

/// Accuracy and mean per-query time, two lines per row: coarse filtering
/// alone and filtering followed by encrypted re-ranking.
pub fn render_table(rows: &[SweepRow]) -> String {
    let mut lines: Vec<[String; 5]> = vec![HEADER.map(String::from)];
    for row in rows {
        let r = &row.report;
        let dim = r.config.pca_dim.to_string();
        lines.push([
            row.setting.clone(),
            "cancelable PQ".into(),
            dim.clone(),
            format!("{:.2}", 100.0 * r.coarse_recall),
            format!("{:.3}", r.filter.mean_ms),
        ]);
        lines.push([
            row.setting.clone(),
            format!("cancelable PQ + {} re-rank (K={})", r.config.backend, r.config.top_k),
            dim,
            format!("{:.2}", 100.0 * r.rerank_recall),
            format!("{:.3}", r.total.mean_ms),
        ]);
    }
    let mut width = [0usize; 5];
    for l in &lines {
        for (w, cell) in width.iter_mut().zip(l) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for l in &lines {
        let _ = writeln!(
            out,
            "{:<w0$}  {:<w1$}  {:>w2$}  {:>w3$}  {:>w4$}",
            l[0],
            l[1],
            l[2],
            l[3],
            l[4],
            w0 = width[0],
            w1 = width[1],
            w2 = width[2],
            w3 = width[3],
            w4 = width[4]
        );
    }
    out
}

/// Writes `report.txt` or `report.json` under `dir` and returns its path.
pub fn emit_report(rows: &[SweepRow], format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let (name, body) = match format {
        ReportFormat::Text => ("report.txt", render_table(rows)),
        ReportFormat::Structured => (
            "report.json",
            serde_json::to_string_pretty(rows).map_err(|e| Error::data(e.to_string()))?,
        ),
    };
    let path = dir.join(name);
    std::fs::write(&path, body)?;
    Ok(path)
}
