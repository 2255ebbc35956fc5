//! Seeded synthetic stand-in for backbone clip features.
//!
//! Every class owns a unit prototype direction. A clip of label `S` has
//! frames `Σ_{c∈S} w_c·p_c + a·sin(2π f t/T + φ)·u + σ·z`, where the
//! mixture weights `w` come from a flat Dirichlet draw per clip, `u` is a
//! shared temporal direction with a per-clip phase `φ`, and `z` is white
//! Gaussian noise. Camera views see the bank through a fixed per-view
//! rotation and their own noise multiplier.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_space::{ClassId, CompositeLabel, LabelSpace};
use crate::nn::Matrix;
use crate::seed::{mix, unique_seed};

/// Prototypes closer than this cosine are redrawn.
pub const MAX_PROTOTYPE_COSINE: f64 = 0.99;

/// A `T × D` clip feature.
pub type FeatureMatrix = Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    seed: u64,
    dim: usize,
    prototypes: Vec<Vec<f64>>,
    temporal: Vec<f64>,
    /// `views[v][c]`; view 0 is the untransformed bank.
    views: Vec<Vec<Vec<f64>>>,
    view_temporal: Vec<Vec<f64>>,
}

/// Unit prototypes plus a unit temporal direction. When `dim` leaves room,
/// all of them are mutually orthogonal (Gram-Schmidt over Gaussian draws);
/// otherwise prototypes are independent Gaussian directions, redrawn on
/// near-collision.
pub fn make_prototypes(seed: u64, n_classes: usize, dim: usize) -> Result<PrototypeBank> {
    if dim < 2 {
        return Err(Error::Invalid(format!("feature dimension must be >= 2, got {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5052_4f54));
    let (prototypes, temporal) = if dim > n_classes {
        let mut basis = orthonormal(&mut rng, n_classes + 1, dim);
        let temporal = basis.pop().expect("n_classes + 1 vectors");
        (basis, temporal)
    } else {
        let prototypes = spread(&mut rng, n_classes, dim)?;
        (prototypes, unit_gaussian(&mut rng, dim))
    };
    Ok(PrototypeBank {
        seed,
        dim,
        views: vec![prototypes.clone()],
        view_temporal: vec![temporal.clone()],
        prototypes,
        temporal,
    })
}

fn orthonormal(rng: &mut impl Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = unit_gaussian(rng, dim);
        // two passes keep the result orthogonal to working precision
        for _ in 0..2 {
            for b in &basis {
                let d = dot(&v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= d * y;
                }
            }
        }
        let n = norm(&v);
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn spread(rng: &mut impl Rng, n_classes: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    const MAX_ATTEMPTS: usize = 100_000;
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let mut attempts = 0;
        loop {
            let candidate = unit_gaussian(rng, dim);
            let collides = prototypes
                .iter()
                .any(|p| dot(p, &candidate) >= MAX_PROTOTYPE_COSINE);
            if !collides {
                prototypes.push(candidate);
                break;
            }
            attempts += 1;
            if attempts == MAX_ATTEMPTS {
                return Err(Error::Invalid(format!(
                    "cannot place prototype {c} in dimension {dim}"
                )));
            }
        }
    }
    Ok(prototypes)
}

impl PrototypeBank {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn prototype(&self, class: ClassId) -> &[f64] {
        &self.prototypes[class.index()]
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    pub fn temporal_direction(&self) -> &[f64] {
        &self.temporal
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    /// Adds views `1..n_views`, each a fixed random rotation of the bank by
    /// Givens rotations of magnitude `angle` over disjoint coordinate pairs.
    pub fn with_views(mut self, n_views: usize, angle: f64) -> Self {
        self.views.truncate(1);
        self.view_temporal.truncate(1);
        for v in 1..n_views {
            let rotation = ViewRotation::new(mix(self.seed, 0x5649_4557 + v as u64), self.dim, angle);
            self.views
                .push(self.prototypes.iter().map(|p| rotation.apply(p)).collect());
            self.view_temporal.push(rotation.apply(&self.temporal));
        }
        self
    }

    pub fn view_prototype(&self, class: ClassId, view: usize) -> &[f64] {
        &self.views[view][class.index()]
    }
}

struct ViewRotation {
    pairs: Vec<(usize, usize, f64, f64)>,
}

impl ViewRotation {
    fn new(seed: u64, dim: usize, angle: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coords: Vec<usize> = (0..dim).collect();
        coords.shuffle(&mut rng);
        let pairs = coords
            .chunks_exact(2)
            .map(|c| {
                let theta = if rng.random_bool(0.5) { angle } else { -angle };
                (c[0], c[1], theta.cos(), theta.sin())
            })
            .collect();
        Self { pairs }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for &(i, j, c, s) in &self.pairs {
            let (a, b) = (x[i], x[j]);
            y[i] = c * a - s * b;
            y[j] = s * a + c * b;
        }
        y
    }
}

fn unit_gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Generator knobs shared by every clip of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub frames: usize,
    pub noise_sigma: f64,
    pub temporal_amplitude: f64,
    /// Compression cycles per clip.
    pub temporal_cycles: f64,
    /// Per-view multiplier on `noise_sigma`; missing entries count as 1.
    #[serde(default)]
    pub view_noise: Vec<f64>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            frames: 8,
            noise_sigma: 0.1,
            temporal_amplitude: 0.3,
            temporal_cycles: 2.0,
            view_noise: vec![1.0, 1.0, 0.8, 1.6],
        }
    }
}

impl SynthParams {
    pub fn view_sigma(&self, view: usize) -> f64 {
        self.noise_sigma * self.view_noise.get(view).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Invalid("frames must be >= 1".into()));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.noise_sigma)
            || !finite_nonneg(self.temporal_amplitude)
            || !self.temporal_cycles.is_finite()
            || !self.view_noise.iter().all(|&v| finite_nonneg(v))
        {
            return Err(Error::Invalid("noise and temporal parameters must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub features: FeatureMatrix,
    pub label: CompositeLabel,
    pub view_id: usize,
    /// Logical sample shared by every view of the same performance.
    pub group: usize,
    pub seed: u64,
}

/// Mixture weights and phase depend on `seed` only, so all views of one
/// performance share them; noise additionally depends on the view.
pub fn synth_clip(
    bank: &PrototypeBank,
    label: &CompositeLabel,
    params: &SynthParams,
    view_id: usize,
    seed: u64,
) -> Result<ClipSample> {
    params.validate()?;
    if label.is_empty() {
        return Err(Error::Label("empty label".into()));
    }
    if let Some(bad) = label.members().iter().find(|c| c.index() >= bank.n_classes()) {
        return Err(Error::Label(format!(
            "class {bad} not in bank of {} classes",
            bank.n_classes()
        )));
    }
    if view_id >= bank.n_views() {
        return Err(Error::Invalid(format!(
            "view {view_id} not in bank with {} views",
            bank.n_views()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = flat_dirichlet(&mut rng, label.len());
    let phase = rng.random_range(0.0..std::f64::consts::TAU);

    let dim = bank.dim();
    let mut base = vec![0.0; dim];
    for (&c, &w) in label.members().iter().zip(&weights) {
        for (b, p) in base.iter_mut().zip(bank.view_prototype(c, view_id)) {
            *b += w * p;
        }
    }
    let temporal = &bank.view_temporal[view_id];
    let sigma = params.view_sigma(view_id);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix(seed, 1 + view_id as u64));
    let t_len = params.frames;
    let mut data = Vec::with_capacity(t_len * dim);
    for t in 0..t_len {
        let angle = std::f64::consts::TAU * params.temporal_cycles * t as f64 / t_len as f64 + phase;
        let amp = params.temporal_amplitude * angle.sin();
        for j in 0..dim {
            let mut v = base[j] + amp * temporal[j];
            if sigma > 0.0 {
                let z: f64 = noise_rng.sample(StandardNormal);
                v += sigma * z;
            }
            data.push(v);
        }
    }
    Ok(ClipSample {
        features: Matrix::from_vec(t_len, dim, data)?,
        label: label.clone(),
        view_id,
        group: 0,
        seed,
    })
}

/// Flat Dirichlet via normalized unit exponentials. One member gets weight 1.
pub fn flat_dirichlet(rng: &mut (impl Rng + ?Sized), k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let draws: Vec<f64> = (0..k)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub per_composite: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train_per_class: 24,
            test_per_class: 16,
            per_composite: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Set1Train,
    Set1Test,
    Set2,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Set1Train => "set1_train",
            SplitName::Set1Test => "set1_test",
            SplitName::Set2 => "set2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub frames: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub n_views: usize,
    pub set1_train: Vec<ClipSample>,
    pub set1_test: Vec<ClipSample>,
    pub set2: Vec<ClipSample>,
}

impl DatasetSplit {
    pub fn split(&self, name: SplitName) -> &[ClipSample] {
        match name {
            SplitName::Set1Train => &self.set1_train,
            SplitName::Set1Test => &self.set1_test,
            SplitName::Set2 => &self.set2,
        }
    }

    /// Rounds every feature through `f32`, matching what the on-disk
    /// format preserves.
    pub fn quantize_f32(&mut self) {
        for clip in self
            .set1_train
            .iter_mut()
            .chain(&mut self.set1_test)
            .chain(&mut self.set2)
        {
            for v in clip.features.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Number of clips per label in a split, in label order.
    pub fn label_counts(&self, name: SplitName) -> std::collections::BTreeMap<CompositeLabel, usize> {
        let mut counts = std::collections::BTreeMap::new();
        for clip in self.split(name) {
            *counts.entry(clip.label.clone()).or_insert(0) += 1;
        }
        counts
    }
}

struct Job {
    split: SplitName,
    label: CompositeLabel,
    group: usize,
    seed: u64,
}

/// Set-1 holds every single class (60/40 train/test by default counts),
/// Set-2 every composite of the label space. Each logical sample is
/// rendered once per view.
pub fn synth_split(
    bank: &PrototypeBank,
    space: &LabelSpace,
    counts: SplitCounts,
    params: &SynthParams,
    n_views: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    params.validate()?;
    if counts.train_per_class == 0 || counts.test_per_class == 0 || counts.per_composite == 0 {
        return Err(Error::Invalid("split counts must be >= 1".into()));
    }
    if n_views == 0 || n_views > bank.n_views() {
        return Err(Error::Invalid(format!(
            "requested {n_views} views, bank provides {}",
            bank.n_views()
        )));
    }
    if bank.n_classes() != space.n_classes() {
        return Err(Error::Invalid(format!(
            "bank has {} classes, label space {}",
            bank.n_classes(),
            space.n_classes()
        )));
    }

    let mut jobs = Vec::new();
    let mut group = 0usize;
    let mut next_seed = || {
        let s = unique_seed(seed, group as u64);
        group += 1;
        (group - 1, s)
    };
    for single in space.singles() {
        let total = counts.train_per_class + counts.test_per_class;
        let mut logical: Vec<(usize, u64)> = (0..total).map(|_| next_seed()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5348_5546 + single.members()[0].0 as u64));
        logical.shuffle(&mut rng);
        for (i, (g, s)) in logical.into_iter().enumerate() {
            let split = if i < counts.train_per_class {
                SplitName::Set1Train
            } else {
                SplitName::Set1Test
            };
            jobs.push(Job { split, label: single.clone(), group: g, seed: s });
        }
    }
    for composite in space.composites() {
        for _ in 0..counts.per_composite {
            let (g, s) = next_seed();
            jobs.push(Job { split: SplitName::Set2, label: composite.clone(), group: g, seed: s });
        }
    }

    let rendered: Vec<(SplitName, Vec<ClipSample>)> = jobs
        .par_iter()
        .map(|job| {
            let clips = (0..n_views)
                .map(|v| {
                    synth_clip(bank, &job.label, params, v, job.seed).map(|mut c| {
                        c.group = job.group;
                        c
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((job.split, clips))
        })
        .collect::<Result<_>>()?;

    let mut out = DatasetSplit {
        frames: params.frames,
        dim: bank.dim(),
        n_classes: bank.n_classes(),
        n_views,
        set1_train: Vec::new(),
        set1_test: Vec::new(),
        set2: Vec::new(),
    };
    for (split, clips) in rendered {
        match split {
            SplitName::Set1Train => out.set1_train.extend(clips),
            SplitName::Set1Test => out.set1_test.extend(clips),
            SplitName::Set2 => out.set2.extend(clips),
        }
    }
    Ok(out)
}

/// Classes ranked by cosine similarity between the time-averaged clip
/// feature and each (view 0) prototype; ties keep ascending class order.
pub fn oracle_rank(sample: &ClipSample, bank: &PrototypeBank) -> Result<Vec<(ClassId, f64)>> {
    if sample.features.cols() != bank.dim() {
        return Err(Error::shape(
            "oracle_rank",
            format!("feature dim {} vs bank dim {}", sample.features.cols(), bank.dim()),
        ));
    }
    let mean = sample.features.mean_rows();
    let n = norm(mean.data());
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Invalid("zero-norm feature".into()));
    }
    let mut scores: Vec<(ClassId, f64)> = bank
        .prototypes()
        .iter()
        .enumerate()
        .map(|(c, p)| (ClassId(c as u16), dot(mean.data(), p) / n))
        .collect();
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scores)
}
