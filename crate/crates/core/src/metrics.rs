//! Ranking metrics: average precision, macro mAP (per class), mmit mAP
//! (per sample) and Top-k accuracy.
//!
//! AP is the non-interpolated mean of precision at each positive's rank.
//! Sorting is by descending score with ties broken by ascending index, so
//! every result is reproducible.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Scores and binary labels, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    scores: Matrix,
    labels: Matrix,
}

impl ScoreTable {
    pub fn new(scores: Matrix, labels: Matrix) -> Result<Self> {
        scores.same_shape(&labels, "score_table")?;
        if labels.data().iter().any(|&l| l != 0.0 && l != 1.0) {
            return Err(Error::Invalid("labels must be binary".into()));
        }
        if !scores.is_finite() {
            return Err(Error::NonFinite("score_table"));
        }
        Ok(Self { scores, labels })
    }

    pub fn n_samples(&self) -> usize {
        self.scores.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.scores.cols()
    }

    pub fn scores(&self) -> &Matrix {
        &self.scores
    }

    pub fn labels(&self) -> &Matrix {
        &self.labels
    }

    fn column(m: &Matrix, c: usize) -> Vec<f64> {
        (0..m.rows()).map(|r| m[(r, c)]).collect()
    }
}

pub fn average_precision(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "average_precision",
            format!("{} scores, {} labels", scores.len(), labels.len()),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1.0 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::Metric("average precision needs at least one positive".into()));
    }
    Ok(total / hits as f64)
}

/// Per-class AP; `None` for classes without positives.
pub fn per_class_ap(table: &ScoreTable) -> Vec<Option<f64>> {
    (0..table.n_classes())
        .into_par_iter()
        .map(|c| {
            let s = ScoreTable::column(&table.scores, c);
            let l = ScoreTable::column(&table.labels, c);
            average_precision(&s, &l).ok()
        })
        .collect()
}

/// Mean of per-class AP over classes that have at least one positive.
pub fn macro_map(table: &ScoreTable) -> Result<f64> {
    let aps: Vec<f64> = per_class_ap(table).into_iter().flatten().collect();
    if aps.is_empty() {
        return Err(Error::Metric("no class has a positive sample".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

pub fn per_sample_ap(table: &ScoreTable) -> Result<Vec<f64>> {
    (0..table.n_samples())
        .into_par_iter()
        .map(|r| {
            average_precision(table.scores.row(r), table.labels.row(r))
                .map_err(|_| Error::Metric(format!("sample {r} has no positive label")))
        })
        .collect()
}

/// Mean over samples of AP computed across classes.
pub fn mmit_map(table: &ScoreTable) -> Result<f64> {
    let aps = per_sample_ap(table)?;
    if aps.is_empty() {
        return Err(Error::Metric("empty score table".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Fraction of single-label rows whose class is among the `k` best scores.
pub fn topk_accuracy(table: &ScoreTable, k: usize) -> Result<f64> {
    if table.n_samples() == 0 {
        return Err(Error::Metric("empty score table".into()));
    }
    let mut correct = 0usize;
    for r in 0..table.n_samples() {
        let labels = table.labels.row(r);
        let positives: Vec<usize> = (0..labels.len()).filter(|&c| labels[c] == 1.0).collect();
        let [truth] = positives[..] else {
            return Err(Error::Metric(format!(
                "row {r} has {} positives, Top-k needs exactly one",
                positives.len()
            )));
        };
        let scores = table.scores.row(r);
        let ahead = (0..scores.len())
            .filter(|&c| {
                scores[c] > scores[truth] || (scores[c] == scores[truth] && c < truth)
            })
            .count();
        if ahead < k {
            correct += 1;
        }
    }
    Ok(correct as f64 / table.n_samples() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub samples: usize,
    pub classes: usize,
    /// Distinct ground-truth label sets present.
    pub label_sets: usize,
    /// Classes skipped by macro mAP because they have no positives.
    pub skipped_classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub macro_map: Option<f64>,
    pub mmit_map: Option<f64>,
    pub per_class_ap: Vec<Option<f64>>,
    pub top1: Option<f64>,
    pub top3: Option<f64>,
    pub counts: EvalCounts,
}

impl EvalReport {
    /// Multi-label evaluation (macro and mmit mAP).
    pub fn multi_label(table: &ScoreTable) -> Result<Self> {
        let per_class = per_class_ap(table);
        let skipped = per_class
            .iter()
            .enumerate()
            .filter(|(_, ap)| ap.is_none())
            .map(|(c, _)| c)
            .collect::<Vec<_>>();
        if !skipped.is_empty() {
            log::debug!("macro mAP skips classes without positives: {skipped:?}");
        }
        Ok(Self {
            macro_map: Some(macro_map(table)?),
            mmit_map: Some(mmit_map(table)?),
            per_class_ap: per_class,
            top1: None,
            top3: None,
            counts: EvalCounts {
                samples: table.n_samples(),
                classes: table.n_classes(),
                label_sets: distinct_rows(&table.labels),
                skipped_classes: skipped,
            },
        })
    }

    /// Single-label evaluation (Top-1 / Top-3 plus per-class AP).
    pub fn single_label(table: &ScoreTable) -> Result<Self> {
        let mut report = Self::multi_label(table)?;
        report.top1 = Some(topk_accuracy(table, 1)?);
        report.top3 = Some(topk_accuracy(table, 3)?);
        Ok(report)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// `class,ap` rows followed by summary rows. Skipped classes have an
    /// empty AP cell.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "class,ap")?;
        for (c, ap) in self.per_class_ap.iter().enumerate() {
            match ap {
                Some(v) => writeln!(out, "{c},{v:.6}")?,
                None => writeln!(out, "{c},")?,
            }
        }
        for (name, value) in [
            ("macro_map", self.macro_map),
            ("mmit_map", self.mmit_map),
            ("top1", self.top1),
            ("top3", self.top3),
        ] {
            if let Some(v) = value {
                writeln!(out, "{name},{v:.6}")?;
            }
        }
        Ok(())
    }
}

fn distinct_rows(m: &Matrix) -> usize {
    let mut rows: Vec<Vec<u8>> = m
        .iter_rows()
        .map(|r| r.iter().map(|&v| v as u8).collect())
        .collect();
    rows.sort();
    rows.dedup();
    rows.len()
}
