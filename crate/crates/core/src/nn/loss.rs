//! Classification losses on logits. Each returns the mean loss together
//! with its gradient with respect to the logits.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Bce,
    MultiMargin,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Ce => "ce",
            LossKind::Bce => "bce",
            LossKind::MultiMargin => "multi_margin",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Matrix,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy over all `N × C` entries.
pub fn bce_with_logits(logits: &Matrix, targets: &Matrix) -> Result<LossOutput> {
    logits.same_shape(targets, "bce_loss")?;
    if let Some(t) = targets.data().iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::Invalid(format!("BCE target {t} is not binary")));
    }
    let count = logits.data().len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for ((g, &z), &t) in grad.data_mut().iter_mut().zip(logits.data()).zip(targets.data()) {
        total += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        *g = (sigmoid(z) - t) / count;
    }
    finish(total / count, grad, "bce_loss")
}

/// Mean softmax cross-entropy against class indices.
pub fn cross_entropy(logits: &Matrix, classes: &[usize]) -> Result<LossOutput> {
    check_indices(logits, classes, "ce_loss")?;
    let n = logits.rows().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for (r, &y) in classes.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[y];
        for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
            let p = (row[j] - log_z).exp();
            *g = (p - if j == y { 1.0 } else { 0.0 }) / n;
        }
    }
    finish(total / n, grad, "ce_loss")
}

/// `mean_{j != y} max(0, margin - z_y + z_j)`, averaged over rows.
pub fn multi_margin(logits: &Matrix, classes: &[usize], margin: f64) -> Result<LossOutput> {
    check_indices(logits, classes, "multi_margin_loss")?;
    let c = logits.cols();
    if c < 2 {
        return Err(Error::shape("multi_margin_loss", "need at least 2 classes"));
    }
    let n = logits.rows().max(1) as f64;
    let w = 1.0 / ((c - 1) as f64 * n);
    let mut total = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), c);
    for (r, &y) in classes.iter().enumerate() {
        let row = logits.row(r).to_vec();
        let g = grad.row_mut(r);
        for j in (0..c).filter(|&j| j != y) {
            let slack = margin - row[y] + row[j];
            if slack > 0.0 {
                total += slack;
                g[j] += w;
                g[y] -= w;
            }
        }
    }
    finish(total * w, grad, "multi_margin_loss")
}

fn check_indices(logits: &Matrix, classes: &[usize], op: &'static str) -> Result<()> {
    if classes.len() != logits.rows() {
        return Err(Error::shape(
            op,
            format!("{} labels for {} rows", classes.len(), logits.rows()),
        ));
    }
    if let Some(&bad) = classes.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::Invalid(format!(
            "class index {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

fn finish(value: f64, grad: Matrix, op: &'static str) -> Result<LossOutput> {
    if !value.is_finite() {
        return Err(Error::NonFinite(op));
    }
    Ok(LossOutput { value, grad })
}
