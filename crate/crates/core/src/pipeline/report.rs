//! Comparison tables: one row per run with Δ against its baseline run.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{RunRecord, RunStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub seed: u64,
    pub macro_map: Option<f64>,
    pub delta_macro: Option<f64>,
    pub mmit_map: Option<f64>,
    pub delta_mmit: Option<f64>,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<TableRow>,
}

impl ComparisonTable {
    /// Baselines resolve by tag, preferring a record with the same seed.
    pub fn from_records(records: &[RunRecord]) -> Self {
        let headline = |r: &RunRecord| r.headline.as_ref().map(|h| (h.macro_map, h.mmit_map));
        let rows = records
            .iter()
            .map(|r| {
                let values = headline(r);
                let base = r.baseline.as_ref().and_then(|tag| {
                    let mut same_tag = records.iter().filter(|b| &b.tag == tag);
                    let chosen = same_tag.clone().find(|b| b.seed == r.seed).or_else(|| same_tag.next());
                    chosen.and_then(headline)
                });
                let delta = |pick: fn((f64, f64)) -> f64| Some(pick(values?) - pick(base?));
                TableRow {
                    method: r.tag.clone(),
                    seed: r.seed,
                    macro_map: values.map(|v| v.0),
                    delta_macro: delta(|v| v.0),
                    mmit_map: values.map(|v| v.1),
                    delta_mmit: delta(|v| v.1),
                    failed: !matches!(r.status, RunStatus::Ok),
                }
            })
            .collect();
        Self { rows }
    }

    fn cells(row: &TableRow) -> [String; 6] {
        let num = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
        let signed = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:+.4}"));
        let fail = |s: String| if row.failed { "FAILED".to_string() } else { s };
        [
            row.method.clone(),
            row.seed.to_string(),
            fail(num(row.macro_map)),
            fail(signed(row.delta_macro)),
            fail(num(row.mmit_map)),
            fail(signed(row.delta_mmit)),
        ]
    }

    const HEADER: [&'static str; 6] = ["method", "seed", "mAP", "delta", "mmit_mAP", "delta"];

    pub fn to_csv(&self) -> String {
        let mut out = Self::HEADER.join(",") + "\n";
        for row in &self.rows {
            out += &Self::cells(row).join(",");
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let body: Vec<[String; 6]> = self.rows.iter().map(Self::cells).collect();
        let mut widths = Self::HEADER.map(str::len);
        for cells in &body {
            for (w, c) in widths.iter_mut().zip(cells) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &Self::HEADER.map(String::from));
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        line(&mut out, &rule);
        for cells in &body {
            line(&mut out, cells);
        }
        out
    }

    /// Writes `summary.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.csv"), self.to_csv())?;
        std::fs::write(dir.join("summary.txt"), self.to_text())?;
        Ok(())
    }
}

/// Every `*/record.json` under `dir`, sorted by path. Unreadable records
/// are skipped with a warning.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let entries = std::fs::read_dir(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(dir.to_owned()),
        _ => Error::Io(e),
    })?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path().join(super::RECORD_FILE))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut records = Vec::new();
    for path in paths {
        match std::fs::read_to_string(&path)
            .map_err(Error::from)
            .and_then(|text| RunRecord::from_json_str(&text))
        {
            Ok(r) => records.push(r),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if records.is_empty() {
        return Err(Error::Missing(dir.join("*").join(super::RECORD_FILE)));
    }
    Ok(records)
}
