//! Single-class training and imagination training.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::{AggregationConfig, FusionModel, HeadCache, HeadInput};
use crate::label_space::{encode_multi_hot, ClassId, CompositeLabel, LabelSpace};
use crate::nn::{bce_with_logits, cross_entropy, multi_margin, LossKind, LossOutput, Matrix, Sgd};
use crate::seed::mix;
use crate::synth::DatasetSplit;

use super::config::{ExperimentConfig, HeadSpec, TrainConfig};

const INIT_TAG: u64 = 0x494e_4954;
const TRAIN_TAG: u64 = 0x5452_4e;

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: FusionModel,
    /// Mean batch loss per epoch.
    pub loss_curve: Vec<f64>,
}

fn check_data(space: &LabelSpace, data: &DatasetSplit) -> Result<()> {
    if data.n_classes != space.n_classes() {
        return Err(Error::Config(format!(
            "dataset has {} classes, label space {}",
            data.n_classes,
            space.n_classes()
        )));
    }
    if data.set1_train.is_empty() {
        return Err(Error::Invalid("set1_train is empty".into()));
    }
    Ok(())
}

fn batch_loss(kind: LossKind, logits: &Matrix, targets: &Matrix, classes: &[usize], margin: f64) -> Result<LossOutput> {
    match kind {
        LossKind::Bce => bce_with_logits(logits, targets),
        LossKind::Ce => cross_entropy(logits, classes),
        LossKind::MultiMargin => multi_margin(logits, classes, margin),
    }
}

/// Backpropagates each row of `dlogits` through its cache, then steps.
fn apply(model: &mut FusionModel, sgd: &mut Sgd, caches: &[HeadCache], dlogits: &Matrix, epoch: usize) -> Result<()> {
    for (r, cache) in caches.iter().enumerate() {
        model.head.backward(cache, &Matrix::row_vector(dlogits.row(r)))?;
    }
    sgd.step(&mut model.head.params_mut(), epoch)
}

fn finish_epoch(curve: &mut Vec<f64>, epoch: usize, total: f64, batches: usize) -> Result<()> {
    let mean = total / batches as f64;
    if !mean.is_finite() {
        return Err(Error::Diverged { epoch, loss: mean });
    }
    log::debug!("epoch {epoch}: loss {mean:.6}");
    curve.push(mean);
    Ok(())
}

fn optimizer(t: &TrainConfig) -> Result<Sgd> {
    Sgd::new(t.lr, t.momentum, t.schedule.clone())
}

/// FC classifier over time-pooled features, trained on single-class clips.
pub fn train_single(cfg: &ExperimentConfig, space: &LabelSpace, data: &DatasetSplit) -> Result<Trained> {
    check_data(space, data)?;
    let t = &cfg.train;
    let head_spec = HeadSpec { variant: "FC".into(), ..cfg.head.clone() };
    let head = head_spec.to_head_config(space.n_classes(), data.frames, data.dim)?;
    let mut model = FusionModel::new(head, AggregationConfig::default(), data.dim, mix(cfg.seed, INIT_TAG))?;
    let mut sgd = optimizer(t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, TRAIN_TAG));
    let kind = t.loss_kind();

    let clips = &data.set1_train;
    let classes: Vec<usize> = clips
        .iter()
        .map(|c| match c.label.members() {
            [only] => Ok(only.index()),
            _ => Err(Error::Invalid(format!("set1 clip carries composite label {}", c.label))),
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut curve = Vec::with_capacity(t.epochs);
    for epoch in 0..t.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0);
        for chunk in order.chunks(t.batch) {
            let mut caches = Vec::with_capacity(chunk.len());
            let mut rows = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (logits, cache) = model.head.forward(HeadInput::Single(&clips[i].features))?;
                rows.push(logits.into_vec());
                caches.push(cache);
                targets.push(encode_multi_hot(&clips[i].label, space.n_classes())?.to_f64());
            }
            let logits = Matrix::from_rows(&rows)?;
            let batch_classes: Vec<usize> = chunk.iter().map(|&i| classes[i]).collect();
            let out = batch_loss(kind, &logits, &Matrix::from_rows(&targets)?, &batch_classes, t.margin)?;
            if !out.value.is_finite() {
                return Err(Error::Diverged { epoch, loss: out.value });
            }
            apply(&mut model, &mut sgd, &caches, &out.grad, epoch)?;
            total += out.value;
            batches += 1;
        }
        finish_epoch(&mut curve, epoch, total, batches)?;
    }
    Ok(Trained { model, loss_curve: curve })
}

/// Composite labels eligible for imagination with `k` members. Class 0
/// (correct execution) never takes part.
pub fn imagination_candidates(space: &LabelSpace, k: usize, exclude_invalid: bool) -> Vec<CompositeLabel> {
    if exclude_invalid {
        return space.composites().filter(|c| c.len() == k).cloned().collect();
    }
    let errors: Vec<ClassId> = space.error_classes().collect();
    let mut out = Vec::new();
    let mut pick = Vec::with_capacity(k);
    fn rec(errors: &[ClassId], start: usize, k: usize, pick: &mut Vec<ClassId>, out: &mut Vec<CompositeLabel>) {
        if pick.len() == k {
            out.push(CompositeLabel::new(pick.iter().copied()).expect("distinct error classes"));
            return;
        }
        for i in start..errors.len() {
            pick.push(errors[i]);
            rec(errors, i + 1, k, pick, out);
            pick.pop();
        }
    }
    rec(&errors, 0, k, &mut pick, &mut out);
    out
}

/// Each sample draws a valid composite, one random Set-1 clip per member
/// (shuffled order), aggregates them and regresses the multi-hot union with
/// BCE. An epoch is `|set1_train|` samples.
pub fn train_imagine(cfg: &ExperimentConfig, space: &LabelSpace, data: &DatasetSplit) -> Result<Trained> {
    check_data(space, data)?;
    let t = &cfg.train;
    let head = cfg.head.to_head_config(space.n_classes(), data.frames, data.dim)?;
    let mut model = FusionModel::new(head, cfg.aggregation.clone(), data.dim, mix(cfg.seed, INIT_TAG))?;
    let mut sgd = optimizer(t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, TRAIN_TAG));

    let candidates = imagination_candidates(space, t.members, t.exclude_invalid_pairs);
    if candidates.is_empty() {
        return Err(Error::Config(format!("no {}-member composites to imagine", t.members)));
    }
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, clip) in data.set1_train.iter().enumerate() {
        if let [only] = clip.label.members() {
            by_class.entry(*only).or_default().push(i);
        }
    }
    if let Some(c) = space.error_classes().find(|c| !by_class.contains_key(c)) {
        return Err(Error::Invalid(format!("no Set-1 clips for class {c}")));
    }

    let n = data.set1_train.len();
    let mut curve = Vec::with_capacity(t.epochs);
    for epoch in 0..t.epochs {
        let (mut total, mut batches) = (0.0, 0);
        let mut done = 0;
        while done < n {
            let size = t.batch.min(n - done);
            done += size;
            let mut caches = Vec::with_capacity(size);
            let mut rows = Vec::with_capacity(size);
            let mut targets = Vec::with_capacity(size);
            for _ in 0..size {
                let label = &candidates[rng.random_range(0..candidates.len())];
                let mut members = label.members().to_vec();
                members.shuffle(&mut rng);
                let feats: Vec<&Matrix> = members
                    .iter()
                    .map(|c| {
                        let pool = &by_class[c];
                        &data.set1_train[pool[rng.random_range(0..pool.len())]].features
                    })
                    .collect();
                let (logits, cache) = model.forward_members(&feats, &mut rng)?;
                rows.push(logits.into_vec());
                caches.push(cache);
                targets.push(encode_multi_hot(label, space.n_classes())?.to_f64());
            }
            let out = bce_with_logits(&Matrix::from_rows(&rows)?, &Matrix::from_rows(&targets)?)?;
            if !out.value.is_finite() {
                return Err(Error::Diverged { epoch, loss: out.value });
            }
            apply(&mut model, &mut sgd, &caches, &out.grad, epoch)?;
            total += out.value;
            batches += 1;
        }
        finish_epoch(&mut curve, epoch, total, batches)?;
    }
    Ok(Trained { model, loss_curve: curve })
}
