//! Scoring trained models on Set-1 (single-class) and Set-2 (composites).

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{fuse_views, FusionModel};
use crate::label_space::encode_multi_hot;
use crate::metrics::{EvalReport, ScoreTable};
use crate::nn::Matrix;
use crate::synth::ClipSample;

use super::config::Subset;

/// One score row per logical sample: per-view scores fused by averaging.
/// Rows follow ascending group id. `views` restricts which cameras count.
pub fn score_samples(
    model: &FusionModel,
    clips: &[ClipSample],
    views: Option<&[usize]>,
) -> Result<(Matrix, Matrix)> {
    let selected: Vec<&ClipSample> = clips
        .iter()
        .filter(|c| views.is_none_or(|v| v.contains(&c.view_id)))
        .collect();
    if selected.is_empty() {
        return Err(Error::Invalid("no clips left to evaluate".into()));
    }
    let scores: Vec<Vec<f64>> = selected
        .par_iter()
        .map(|c| model.infer(&c.features))
        .collect::<Result<_>>()?;

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, c) in selected.iter().enumerate() {
        groups.entry(c.group).or_default().push(i);
    }
    let n_classes = scores[0].len();
    let mut score_rows = Vec::with_capacity(groups.len());
    let mut label_rows = Vec::with_capacity(groups.len());
    for members in groups.values() {
        let label = &selected[members[0]].label;
        if members.iter().any(|&i| selected[i].label != *label) {
            return Err(Error::Invalid(format!("views of one sample disagree on its label {label}")));
        }
        let per_view: Vec<Vec<f64>> = members.iter().map(|&i| scores[i].clone()).collect();
        score_rows.push(fuse_views(&per_view)?);
        label_rows.push(encode_multi_hot(label, n_classes)?.to_f64());
    }
    Ok((Matrix::from_rows(&score_rows)?, Matrix::from_rows(&label_rows)?))
}

/// Top-1/Top-3 and per-class AP on held-out single-class clips.
pub fn evaluate_single(model: &FusionModel, set1_test: &[ClipSample], views: Option<&[usize]>) -> Result<EvalReport> {
    let (scores, labels) = score_samples(model, set1_test, views)?;
    EvalReport::single_label(&ScoreTable::new(scores, labels)?)
}

/// Macro and mmit mAP over the Set-2 composites in `subset`.
pub fn evaluate_composite(
    model: &FusionModel,
    set2: &[ClipSample],
    subset: Subset,
    views: Option<&[usize]>,
) -> Result<EvalReport> {
    let clips: Vec<ClipSample> = set2
        .iter()
        .filter(|c| c.label.len() <= subset.max_members())
        .cloned()
        .collect();
    if clips.is_empty() {
        return Err(Error::Invalid(format!("subset {subset} selects no composite clips")));
    }
    let (scores, labels) = score_samples(model, &clips, views)?;
    EvalReport::multi_label(&ScoreTable::new(scores, labels)?)
}

/// Direct migration: a single-class model scored on composites as is.
pub fn direct_migration_eval(
    model: &FusionModel,
    set2: &[ClipSample],
    subset: Subset,
    views: Option<&[usize]>,
) -> Result<EvalReport> {
    evaluate_composite(model, set2, subset, views)
}
