//! Mean and standard error of OT cost per (dataset, sampler, particle count).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dmps::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::experiment::ResultRow;

pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TXT: &str = "summary.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub dataset: String,
    pub sampler: String,
    pub m_particles: usize,
    /// Successful runs.
    pub n: usize,
    pub failures: usize,
    /// Empty when every run failed.
    pub mean: Option<f64>,
    /// Sample standard deviation over `sqrt(n)`; 0 for a single run.
    pub stderr: Option<f64>,
    pub mean_wall_time_seconds: Option<f64>,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Groups rows by (dataset, sampler, particle count). Datasets and samplers
/// keep their first-seen order; particle counts are ascending.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryCell>> {
    if rows.is_empty() {
        return Err(Error::invalid("no result rows to summarize"));
    }
    let mut datasets: Vec<&str> = Vec::new();
    let mut samplers: Vec<&str> = Vec::new();
    for r in rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !samplers.contains(&r.sampler.as_str()) {
            samplers.push(&r.sampler);
        }
    }
    let mut ms: Vec<usize> = rows.iter().map(|r| r.m_particles).collect();
    ms.sort_unstable();
    ms.dedup();

    let mut cells = Vec::new();
    for &ds in &datasets {
        for &m in &ms {
            for &s in &samplers {
                let group: Vec<&ResultRow> = rows
                    .iter()
                    .filter(|r| r.dataset == ds && r.sampler == s && r.m_particles == m)
                    .collect();
                if group.is_empty() {
                    continue;
                }
                let ok: Vec<&ResultRow> = group.iter().copied().filter(|r| r.is_ok()).collect();
                let costs: Vec<f64> = ok.iter().filter_map(|r| r.ot_cost).collect();
                let times: Vec<f64> = ok.iter().map(|r| r.wall_time_seconds).collect();
                let (mean, stderr) = if costs.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = mean_stderr(&costs);
                    (Some(m), Some(s))
                };
                cells.push(SummaryCell {
                    dataset: ds.to_string(),
                    sampler: s.to_string(),
                    m_particles: m,
                    n: costs.len(),
                    failures: group.len() - ok.len(),
                    mean,
                    stderr,
                    mean_wall_time_seconds: (!times.is_empty())
                        .then(|| times.iter().sum::<f64>() / times.len() as f64),
                });
            }
        }
    }
    Ok(cells)
}

/// One table per dataset: particle counts down, samplers across.
pub fn format_table(cells: &[SummaryCell]) -> String {
    let mut out = String::new();
    let mut datasets: Vec<&str> = Vec::new();
    for c in cells {
        if !datasets.contains(&c.dataset.as_str()) {
            datasets.push(&c.dataset);
        }
    }
    for ds in datasets {
        let these: Vec<&SummaryCell> = cells.iter().filter(|c| c.dataset == ds).collect();
        let mut samplers: Vec<&str> = Vec::new();
        let mut ms: Vec<usize> = Vec::new();
        for c in &these {
            if !samplers.contains(&c.sampler.as_str()) {
                samplers.push(&c.sampler);
            }
            if !ms.contains(&c.m_particles) {
                ms.push(c.m_particles);
            }
        }
        let text = |c: Option<&&SummaryCell>| match c {
            Some(c) => match (c.mean, c.stderr) {
                (Some(m), Some(s)) if c.failures == 0 => format!("{m:.4} ± {s:.4}"),
                (Some(m), Some(s)) => format!("{m:.4} ± {s:.4} ({} failed)", c.failures),
                _ => format!("failed ({})", c.failures),
            },
            None => "-".into(),
        };
        let mut grid = vec![std::iter::once("M".to_string())
            .chain(samplers.iter().map(|s| s.to_uppercase()))
            .collect::<Vec<_>>()];
        for &m in &ms {
            let mut line = vec![m.to_string()];
            for &s in &samplers {
                line.push(text(these.iter().find(|c| c.sampler == s && c.m_particles == m)));
            }
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let _ = writeln!(out, "{ds}: OT cost (mean ± standard error)");
        for line in grid {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(v, w)| format!("{v:<w$}", w = *w))
                .collect();
            let _ = writeln!(out, "  {}", cells.join("  ").trim_end());
        }
        out.push('\n');
    }
    out
}

/// Writes `summary.csv` and `summary.txt` into `dir`.
pub fn emit_summary(rows: &[ResultRow], dir: &Path) -> Result<Vec<SummaryCell>> {
    let cells = summarize(rows)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(SUMMARY_CSV);
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(fmt)?;
    for c in &cells {
        w.serialize(c).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let txt = dir.join(SUMMARY_TXT);
    fs::write(&txt, format_table(&cells)).map_err(|e| Error::io(&txt, e))?;
    Ok(cells)
}
