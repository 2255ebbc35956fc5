//! Single-head scaled dot-product attention.

use super::layers::{softmax_rows, softmax_rows_backward};
use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AttentionCache {
    weights: Matrix,
    scale: f64,
}

impl AttentionCache {
    /// Row-stochastic attention weights, one row per query.
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }
}

/// `softmax(Q Kᵀ / sqrt(D)) V`
pub fn scaled_dot_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<(Matrix, AttentionCache)> {
    if q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(Error::shape(
            "attention",
            format!("Q {:?}, K {:?}, V {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    let scale = 1.0 / (q.cols().max(1) as f64).sqrt();
    let scores = q.matmul_t(k)?.scale(scale);
    let weights = softmax_rows(&scores);
    let out = weights.matmul(v)?.ensure_finite("attention")?;
    Ok((out, AttentionCache { weights, scale }))
}

pub struct AttentionGrads {
    pub dq: Matrix,
    pub dk: Matrix,
    pub dv: Matrix,
}

pub fn scaled_dot_attention_backward(
    cache: &AttentionCache,
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    dout: &Matrix,
) -> Result<AttentionGrads> {
    let dweights = dout.matmul_t(v)?;
    let dv = cache.weights.t_matmul(dout)?;
    let dscores = softmax_rows_backward(&cache.weights, &dweights)?.scale(cache.scale);
    let dq = dscores.matmul(k)?;
    let dk = dscores.t_matmul(q)?;
    Ok(AttentionGrads { dq, dk, dv })
}
