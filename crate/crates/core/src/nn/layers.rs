use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::new(name, Matrix::zeros(rows, cols))
    }

    /// Uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self::new(name, Matrix::from_vec(rows, cols, data).expect("sized"))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// `y = xW + b`
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::uniform(format!("{name}.weight"), inputs, outputs, inputs, rng),
            bias: Param::uniform(format!("{name}.bias"), 1, outputs, inputs, rng),
        }
    }

    pub fn from_params(weight: Param, bias: Param) -> Result<Self> {
        if bias.value.rows() != 1 || bias.value.cols() != weight.value.cols() {
            return Err(Error::shape(
                "linear",
                format!(
                    "bias {:?} for weight {:?}",
                    bias.value.shape(),
                    weight.value.shape()
                ),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.inputs() {
            return Err(Error::shape(
                "linear",
                format!("input {:?} for weight {:?}", x.shape(), self.weight.value.shape()),
            ));
        }
        let mut y = x.matmul(&self.weight.value)?;
        let b = self.bias.value.data();
        for r in 0..y.rows() {
            for (v, bv) in y.row_mut(r).iter_mut().zip(b) {
                *v += bv;
            }
        }
        y.ensure_finite("linear")
    }

    /// Accumulates `dW = xᵀdy`, `db = Σdy`; returns `dx = dy Wᵀ`.
    pub fn backward(&mut self, x: &Matrix, dy: &Matrix) -> Result<Matrix> {
        if dy.rows() != x.rows() || dy.cols() != self.outputs() {
            return Err(Error::shape("linear_backward", format!("dy {:?}", dy.shape())));
        }
        self.weight.grad.add_assign(&x.t_matmul(dy)?)?;
        self.bias.grad.add_assign(&dy.sum_rows())?;
        dy.matmul_t(&self.weight.value)
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Gradient through ReLU given the pre-activation.
pub fn relu_backward(pre: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    for (d, &p) in dx.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    for r in 0..y.rows() {
        let row = y.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    y
}

/// `dx_i = y_i (dy_i - Σ_j y_j dy_j)` per row, given the softmax output `y`.
pub fn softmax_rows_backward(y: &Matrix, dy: &Matrix) -> Result<Matrix> {
    y.same_shape(dy, "softmax_backward")?;
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, dyr) = (y.row(r), dy.row(r));
        let inner: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &g) in dx.row_mut(r).iter_mut().zip(yr).zip(dyr) {
            *d = yv * (g - inner);
        }
    }
    Ok(dx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Param,
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gain: Param::new(format!("{name}.gain"), Matrix::filled(1, dim, 1.0)),
            bias: Param::zeros(format!("{name}.bias"), 1, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.value.cols()
    }

    /// Per-row standardization with `LAYER_NORM_EPS` inside the square root.
    pub fn normalize(x: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        if x.cols() < 2 {
            return Err(Error::shape("layer_norm", "need at least 2 columns"));
        }
        let n = x.cols() as f64;
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            for v in row.iter_mut() {
                *v -= mean;
            }
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v *= s;
            }
            inv_std.push(s);
        }
        Ok((out, inv_std))
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LayerNormCache)> {
        if x.cols() != self.dim() {
            return Err(Error::shape(
                "layer_norm",
                format!("input {:?} for dim {}", x.shape(), self.dim()),
            ));
        }
        let (normalized, inv_std) = Self::normalize(x)?;
        let mut y = normalized.clone();
        let (g, b) = (self.gain.value.data(), self.bias.value.data());
        for r in 0..y.rows() {
            for ((v, gv), bv) in y.row_mut(r).iter_mut().zip(g).zip(b) {
                *v = *v * gv + bv;
            }
        }
        Ok((
            y.ensure_finite("layer_norm")?,
            LayerNormCache {
                normalized,
                inv_std,
            },
        ))
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Matrix) -> Result<Matrix> {
        cache.normalized.same_shape(dy, "layer_norm_backward")?;
        let d = dy.cols();
        let n = d as f64;
        let mut dx = Matrix::zeros(dy.rows(), d);
        let gain = self.gain.value.data().to_vec();
        for r in 0..dy.rows() {
            let (xh, g) = (cache.normalized.row(r), dy.row(r));
            for j in 0..d {
                self.gain.grad.data_mut()[j] += g[j] * xh[j];
                self.bias.grad.data_mut()[j] += g[j];
            }
            let dxh: Vec<f64> = g.iter().zip(&gain).map(|(a, b)| a * b).collect();
            let sum: f64 = dxh.iter().sum();
            let sum_xh: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
            let s = cache.inv_std[r] / n;
            for (j, out) in dx.row_mut(r).iter_mut().enumerate() {
                *out = s * (n * dxh[j] - sum - xh[j] * sum_xh);
            }
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.gain, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.gain, &self.bias]
    }
}

/// `W2 · relu(W1 x + b1) + b2`, applied per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    pre: Matrix,
    hidden: Matrix,
}

impl FeedForward {
    pub fn new(name: &str, dim: usize, inner_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            inner: Linear::new(&format!("{name}.inner"), dim, inner_dim, rng),
            outer: Linear::new(&format!("{name}.outer"), inner_dim, dim, rng),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, FeedForwardCache)> {
        let pre = self.inner.forward(x)?;
        let hidden = relu(&pre);
        let y = self.outer.forward(&hidden)?;
        Ok((y, FeedForwardCache { pre, hidden }))
    }

    pub fn backward(&mut self, x: &Matrix, cache: &FeedForwardCache, dy: &Matrix) -> Result<Matrix> {
        let dh = self.outer.backward(&cache.hidden, dy)?;
        let dpre = relu_backward(&cache.pre, &dh);
        self.inner.backward(x, &dpre)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.inner.params_mut().into_iter().chain(self.outer.params_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.inner.params().into_iter().chain(self.outer.params())
    }
}

/// Learned additive table, zero-initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEmbedding {
    pub table: Param,
    pub enabled: bool,
}

impl PositionalEmbedding {
    pub fn new(name: &str, frames: usize, dim: usize, enabled: bool) -> Self {
        Self {
            table: Param::zeros(format!("{name}.table"), frames, dim),
            enabled,
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        x.same_shape(&self.table.value, "positional_embedding")?;
        if self.enabled {
            x.add(&self.table.value)
        } else {
            Ok(x.clone())
        }
    }

    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        if self.enabled {
            self.table.grad.add_assign(dy)?;
        }
        Ok(dy.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::new("l", 2, 2, &mut rng);
        lin.weight.value = Matrix::identity(2);
        lin.bias.value = Matrix::zeros(1, 2);
        assert_eq!(lin.forward(&Matrix::identity(2)).unwrap(), Matrix::identity(2));
        assert!(lin.forward(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn zero_input_gradient_flows_to_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lin = Linear::new("l", 3, 2, &mut rng);
        let x = Matrix::zeros(4, 3);
        let dy = Matrix::from_vec(4, 2, vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        lin.backward(&x, &dy).unwrap();
        assert!(lin.weight.grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(lin.bias.grad.data(), &[16., 20.]);
    }

    #[test]
    fn softmax_cases() {
        let y = softmax_rows(&Matrix::zeros(1, 3));
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = softmax_rows(&Matrix::row_vector(&[1000.0, 0.0]));
        assert!(y.is_finite());
        assert!((y[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(y[(0, 1)] < 1e-300);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let ln = LayerNorm::new("ln", 4);
        let (y, _) = ln.forward(&Matrix::filled(2, 4, 3.5)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(ln.forward(&Matrix::zeros(1, 3)).is_err());
        assert!(LayerNorm::normalize(&Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn feed_forward_zero_input_propagates_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ffn = FeedForward::new("f", 3, 12, &mut rng);
        let (y, _) = ffn.forward(&Matrix::zeros(2, 3)).unwrap();
        let expected = ffn
            .outer
            .forward(&relu(&ffn.inner.bias.value))
            .unwrap();
        for r in 0..2 {
            assert_eq!(y.row(r), expected.row(0));
        }
    }

    #[test]
    fn feed_forward_identity_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ffn = FeedForward::new("f", 2, 2, &mut rng);
        for lin in [&mut ffn.inner, &mut ffn.outer] {
            lin.weight.value = Matrix::identity(2);
            lin.bias.value = Matrix::zeros(1, 2);
        }
        let x = Matrix::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let (y, _) = ffn.forward(&x).unwrap();
        assert_eq!(y, relu(&x));
    }

    #[test]
    fn positional_embedding_modes() {
        let x = Matrix::from_vec(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let mut pe = PositionalEmbedding::new("p", 2, 2, true);
        assert_eq!(pe.forward(&x).unwrap(), x);
        pe.table.value = Matrix::filled(2, 2, 1.0);
        assert_eq!(pe.forward(&x).unwrap(), x.map(|v| v + 1.0));
        let dy = Matrix::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(pe.backward(&dy).unwrap(), dy);
        assert_eq!(pe.table.grad, dy);
        pe.enabled = false;
        assert_eq!(pe.forward(&x).unwrap(), x);
        assert!(pe.forward(&Matrix::zeros(3, 2)).is_err());
    }
}
