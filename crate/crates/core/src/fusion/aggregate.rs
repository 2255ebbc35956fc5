//! Feature aggregation: how several clip features become one imagined
//! composite feature.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::seed::mix;
use crate::synth::flat_dirichlet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    /// Elementwise mean.
    VanillaSum,
    /// `λx₁ + (1−λ)x₂` with `λ ~ U(0,1)`; flat Dirichlet weights for k > 2.
    WeightedRandom,
    /// Frame-wise count sketch of the outer product `x₁ ⊗ x₂`.
    CountSketch,
}

impl AggregationKind {
    pub fn short_name(self) -> &'static str {
        match self {
            AggregationKind::VanillaSum => "sum",
            AggregationKind::WeightedRandom => "agg1",
            AggregationKind::CountSketch => "agg2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationConfig {
    pub kind: AggregationKind,
    #[serde(default = "default_sketch_dim")]
    pub sketch_dim: usize,
    /// Seeds the sketch hashes.
    #[serde(default)]
    pub seed: u64,
    /// Pins the first weight (λ) instead of sampling it.
    #[serde(default)]
    pub forced_weight: Option<f64>,
}

fn default_sketch_dim() -> usize {
    512
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            kind: AggregationKind::WeightedRandom,
            sketch_dim: default_sketch_dim(),
            seed: 0,
            forced_weight: None,
        }
    }
}

impl AggregationConfig {
    pub fn of(kind: AggregationKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

/// Tensor-sketch projection of `x₁ ⊗ x₂` into `dim` buckets, computed as the
/// circular convolution of two count sketches via FFT.
#[derive(Clone)]
pub struct CompactBilinear {
    input_dim: usize,
    dim: usize,
    buckets: [Vec<usize>; 2],
    signs: [Vec<f64>; 2],
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CompactBilinear {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompactBilinear")
            .field("input_dim", &self.input_dim)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl CompactBilinear {
    pub fn new(input_dim: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || input_dim == 0 {
            return Err(Error::Config("sketch dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x4342_5030));
        let mut draw = || -> (Vec<usize>, Vec<f64>) {
            let h = (0..input_dim).map(|_| rng.random_range(0..dim)).collect();
            let s = (0..input_dim)
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                .collect();
            (h, s)
        };
        let (h1, s1) = draw();
        let (h2, s2) = draw();
        let mut planner = FftPlanner::new();
        Ok(Self {
            input_dim,
            dim,
            buckets: [h1, h2],
            signs: [s1, s2],
            forward: planner.plan_fft_forward(dim),
            inverse: planner.plan_fft_inverse(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn count_sketch(&self, which: usize, x: &[f64]) -> Vec<Complex<f64>> {
        let mut out = vec![Complex::new(0.0, 0.0); self.dim];
        for ((&v, &h), &s) in x.iter().zip(&self.buckets[which]).zip(&self.signs[which]) {
            out[h].re += s * v;
        }
        out
    }

    /// Sketch of one frame pair.
    pub fn project(&self, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
        if x1.len() != self.input_dim || x2.len() != self.input_dim {
            return Err(Error::shape(
                "compact_bilinear",
                format!("inputs {} and {} for dim {}", x1.len(), x2.len(), self.input_dim),
            ));
        }
        let mut a = self.count_sketch(0, x1);
        let mut b = self.count_sketch(1, x2);
        self.forward.process(&mut a);
        self.forward.process(&mut b);
        for (u, v) in a.iter_mut().zip(&b) {
            *u *= v;
        }
        self.inverse.process(&mut a);
        let n = self.dim as f64;
        Ok(a.into_iter().map(|c| c.re / n).collect())
    }

    /// Direct scatter of every product term; O(D²). Used to cross-check the
    /// FFT route.
    pub fn project_direct(&self, x1: &[f64], x2: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for i in 0..x1.len() {
            for j in 0..x2.len() {
                let bucket = (self.buckets[0][i] + self.buckets[1][j]) % self.dim;
                out[bucket] += self.signs[0][i] * self.signs[1][j] * x1[i] * x2[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Aggregator {
    config: AggregationConfig,
    input_dim: usize,
    sketch: Option<CompactBilinear>,
}

impl Aggregator {
    pub fn new(config: AggregationConfig, input_dim: usize) -> Result<Self> {
        if let Some(w) = config.forced_weight {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("forced weight {w} outside [0, 1]")));
            }
        }
        let sketch = match config.kind {
            AggregationKind::CountSketch => {
                if config.sketch_dim * 4 < input_dim {
                    return Err(Error::Config(format!(
                        "sketch_dim {} must be at least D/4 = {}",
                        config.sketch_dim,
                        input_dim.div_ceil(4)
                    )));
                }
                Some(CompactBilinear::new(input_dim, config.sketch_dim, config.seed)?)
            }
            _ => None,
        };
        Ok(Self {
            config,
            input_dim,
            sketch,
        })
    }

    pub fn config(&self) -> &AggregationConfig {
        &self.config
    }

    /// Feature width seen by the head.
    pub fn output_dim(&self) -> usize {
        self.sketch.as_ref().map_or(self.input_dim, CompactBilinear::dim)
    }

    pub fn aggregate<R: Rng + ?Sized>(&self, xs: &[&Matrix], rng: &mut R) -> Result<Matrix> {
        let Some(first) = xs.first() else {
            return Err(Error::Invalid("aggregate needs at least one feature".into()));
        };
        for x in xs {
            x.same_shape(first, "aggregate")?;
        }
        if first.cols() != self.input_dim {
            return Err(Error::shape(
                "aggregate",
                format!("feature dim {} vs {}", first.cols(), self.input_dim),
            ));
        }
        match self.config.kind {
            AggregationKind::VanillaSum => {
                let k = xs.len();
                convex(xs, &vec![1.0 / k as f64; k])
            }
            AggregationKind::WeightedRandom => {
                let weights = match (self.config.forced_weight, xs.len()) {
                    (_, 1) => vec![1.0],
                    (Some(l), k) => {
                        let rest = (1.0 - l) / (k - 1) as f64;
                        std::iter::once(l).chain(std::iter::repeat_n(rest, k - 1)).collect()
                    }
                    (None, 2) => {
                        let l: f64 = rng.random();
                        vec![l, 1.0 - l]
                    }
                    (None, k) => flat_dirichlet(rng, k),
                };
                convex(xs, &weights)
            }
            AggregationKind::CountSketch => {
                let sketch = self.sketch.as_ref().expect("built with sketch");
                let [a, b] = xs else {
                    return Err(Error::Invalid(format!(
                        "compact bilinear pooling fuses exactly 2 features, got {}",
                        xs.len()
                    )));
                };
                let mut rows = Vec::with_capacity(a.rows() * sketch.dim());
                for t in 0..a.rows() {
                    rows.extend(sketch.project(a.row(t), b.row(t))?);
                }
                Matrix::from_vec(a.rows(), sketch.dim(), rows)
            }
        }
    }

    /// Fills the two-input interface with a lone feature: `aggregate([x, x])`.
    /// Exactly `x` for the convex strategies.
    pub fn replicate(&self, x: &Matrix) -> Result<Matrix> {
        // the weights never matter for equal inputs; a fixed stream keeps
        // inference free of caller RNG state.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.aggregate(&[x, x], &mut rng)
    }
}

/// `x₁ + Σ_{i≥2} wᵢ (xᵢ − x₁)`, equal to `Σ wᵢ xᵢ` when the weights sum to
/// one, and bit-exactly `x₁` when every input equals `x₁`.
fn convex(xs: &[&Matrix], weights: &[f64]) -> Result<Matrix> {
    let mut out = xs[0].clone();
    for (x, &w) in xs.iter().zip(weights).skip(1) {
        for ((o, &v), &base) in out.data_mut().iter_mut().zip(x.data()).zip(xs[0].data()) {
            *o += w * (v - base);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn equal_inputs_are_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 8, 16);
        for kind in [AggregationKind::VanillaSum, AggregationKind::WeightedRandom] {
            let agg = Aggregator::new(AggregationConfig::of(kind), 16).unwrap();
            for _ in 0..50 {
                assert_eq!(agg.aggregate(&[&x, &x], &mut rng).unwrap(), x);
                assert_eq!(agg.aggregate(&[&x, &x, &x, &x], &mut rng).unwrap(), x);
            }
            assert_eq!(agg.replicate(&x).unwrap(), x);
        }
    }

    #[test]
    fn forced_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random(&mut rng, 2, 4), random(&mut rng, 2, 4));
        let mut cfg = AggregationConfig::of(AggregationKind::WeightedRandom);
        cfg.forced_weight = Some(1.0);
        let agg = Aggregator::new(cfg.clone(), 4).unwrap();
        assert_eq!(agg.aggregate(&[&a, &b], &mut rng).unwrap(), a);
        cfg.forced_weight = Some(0.0);
        let agg = Aggregator::new(cfg.clone(), 4).unwrap();
        assert!(agg.aggregate(&[&a, &b], &mut rng).unwrap().max_abs_diff(&b) < 1e-15);
        cfg.forced_weight = Some(0.25);
        let agg = Aggregator::new(cfg.clone(), 4).unwrap();
        let mix = agg.aggregate(&[&a, &b], &mut rng).unwrap();
        let expected = a.scale(0.25).add(&b.scale(0.75)).unwrap();
        assert!(mix.max_abs_diff(&expected) < 1e-15);
        cfg.forced_weight = Some(1.5);
        assert!(Aggregator::new(cfg, 4).is_err());
    }

    #[test]
    fn weighted_is_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Matrix::filled(1, 3, 0.0);
        let b = Matrix::filled(1, 3, 1.0);
        let agg = Aggregator::new(AggregationConfig::of(AggregationKind::WeightedRandom), 3).unwrap();
        let mut seen = Vec::new();
        for _ in 0..200 {
            let m = agg.aggregate(&[&a, &b], &mut rng).unwrap();
            // output = 1 - λ, uniform on (0, 1]
            assert!(m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            seen.push(m[(0, 0)]);
        }
        let mean = seen.iter().sum::<f64>() / seen.len() as f64;
        assert!((mean - 0.5).abs() < 0.06, "{mean}");
    }

    #[test]
    fn vanilla_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b, c) = (random(&mut rng, 2, 3), random(&mut rng, 2, 3), random(&mut rng, 2, 3));
        let agg = Aggregator::new(AggregationConfig::of(AggregationKind::VanillaSum), 3).unwrap();
        let m = agg.aggregate(&[&a, &b, &c], &mut rng).unwrap();
        let expected = a.add(&b).unwrap().add(&c).unwrap().scale(1.0 / 3.0);
        assert!(m.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn aggregate_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let agg = Aggregator::new(AggregationConfig::of(AggregationKind::VanillaSum), 3).unwrap();
        assert!(agg.aggregate(&[], &mut rng).is_err());
        let (a, b) = (Matrix::zeros(2, 3), Matrix::zeros(3, 3));
        assert!(agg.aggregate(&[&a, &b], &mut rng).is_err());
        assert!(agg.aggregate(&[&Matrix::zeros(2, 4)], &mut rng).is_err());
        let cbp = Aggregator::new(
            AggregationConfig { kind: AggregationKind::CountSketch, sketch_dim: 8, ..Default::default() },
            3,
        )
        .unwrap();
        assert!(cbp.aggregate(&[&a, &a, &a], &mut rng).is_err());
        let small = AggregationConfig { kind: AggregationKind::CountSketch, sketch_dim: 7, ..Default::default() };
        assert!(Aggregator::new(small, 32).is_err());
    }

    #[test]
    fn fft_sketch_matches_direct_scatter() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cbp = CompactBilinear::new(24, 64, 9).unwrap();
        let (x, y) = (random(&mut rng, 1, 24), random(&mut rng, 1, 24));
        let fast = cbp.project(x.data(), y.data()).unwrap();
        let slow = cbp.project_direct(x.data(), y.data());
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sketch_output_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = AggregationConfig { kind: AggregationKind::CountSketch, sketch_dim: 32, ..Default::default() };
        let agg = Aggregator::new(cfg, 16).unwrap();
        assert_eq!(agg.output_dim(), 32);
        let x = random(&mut rng, 8, 16);
        assert_eq!(agg.replicate(&x).unwrap().shape(), (8, 32));
    }
}
