//! On-disk datasets: a JSON manifest plus one raw feature file per clip.
//!
//! Feature files hold `T × D` little-endian `f32` values, row-major, with
//! no header; the shape lives in the manifest. Clip paths follow
//! `<split>/<labelhash>/<index>_<view>.bin` relative to the dataset root.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_space::CompositeLabel;
use crate::nn::Matrix;
use crate::synth::{ClipSample, DatasetSplit, SplitName};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT: &str = "imaginenet-dataset";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_features(features: &Matrix) -> Vec<u8> {
    features
        .data()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

pub fn decode_features(bytes: &[u8], frames: usize, dim: usize) -> Result<Matrix> {
    let expected = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Features(format!("shape {frames}x{dim} overflows")))?;
    if bytes.len() != expected {
        return Err(Error::Features(format!(
            "expected {expected} bytes for {frames}x{dim}, got {}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Features("non-finite feature value".into()));
    }
    Matrix::from_vec(frames, dim, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub split: SplitName,
    pub label: CompositeLabel,
    pub group: usize,
    pub index: usize,
    pub view: usize,
    pub seed: u64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub frames: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub n_views: usize,
    /// Free-form provenance (generator config).
    #[serde(default)]
    pub provenance: serde_json::Value,
    pub clips: Vec<ClipEntry>,
}

impl Manifest {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT || self.version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported dataset format {} v{}",
                self.format, self.version
            )));
        }
        if self.frames == 0 || self.dim < 2 || self.n_views == 0 {
            return Err(Error::Config("manifest shape fields out of range".into()));
        }
        for clip in &self.clips {
            if clip.view >= self.n_views {
                return Err(Error::Config(format!("clip view {} >= n_views", clip.view)));
            }
            if let Some(c) = clip.label.members().iter().find(|c| c.index() >= self.n_classes) {
                return Err(Error::Config(format!("clip label class {c} >= n_classes")));
            }
            let single = clip.label.len() == 1;
            if single == (clip.split == SplitName::Set2) {
                return Err(Error::Config(format!(
                    "label {} does not belong in {}",
                    clip.label,
                    clip.split.as_str()
                )));
            }
            safe_relative(&clip.path)?;
        }
        Ok(())
    }

    pub fn counts(&self) -> BTreeMap<SplitName, BTreeMap<String, usize>> {
        let mut out: BTreeMap<SplitName, BTreeMap<String, usize>> = BTreeMap::new();
        for clip in &self.clips {
            *out.entry(clip.split)
                .or_default()
                .entry(clip.label.key())
                .or_insert(0) += 1;
        }
        out
    }
}

fn safe_relative(path: &str) -> Result<PathBuf> {
    let p = Path::new(path);
    let ok = !path.is_empty()
        && p.components().all(|c| matches!(c, Component::Normal(_)));
    if !ok {
        return Err(Error::Config(format!("clip path {path:?} escapes the dataset root")));
    }
    Ok(p.to_owned())
}

pub fn clip_path(split: SplitName, label: &CompositeLabel, index: usize, view: usize) -> String {
    format!("{}/{}/{index}_{view}.bin", split.as_str(), label.label_hash())
}

pub fn build_manifest(split: &DatasetSplit, provenance: serde_json::Value) -> Manifest {
    let mut clips = Vec::new();
    for name in [SplitName::Set1Train, SplitName::Set1Test, SplitName::Set2] {
        // index counts logical samples per label within the split
        let mut next_index: BTreeMap<&CompositeLabel, usize> = BTreeMap::new();
        let mut group_index: BTreeMap<usize, usize> = BTreeMap::new();
        for clip in split.split(name) {
            let index = *group_index.entry(clip.group).or_insert_with(|| {
                let n = next_index.entry(&clip.label).or_insert(0);
                *n += 1;
                *n - 1
            });
            clips.push(ClipEntry {
                split: name,
                label: clip.label.clone(),
                group: clip.group,
                index,
                view: clip.view_id,
                seed: clip.seed,
                path: clip_path(name, &clip.label, index, clip.view_id),
            });
        }
    }
    Manifest {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        frames: split.frames,
        dim: split.dim,
        n_classes: split.n_classes,
        n_views: split.n_views,
        provenance,
        clips,
    }
}

/// Writes manifest and features under `dir`. Refuses to touch an existing
/// dataset unless `force` is set.
pub fn write_dataset(
    dir: &Path,
    split: &DatasetSplit,
    provenance: serde_json::Value,
    force: bool,
) -> Result<Manifest> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        return Err(Error::Invalid(format!(
            "{} already exists (use --force to overwrite)",
            manifest_path.display()
        )));
    }
    let manifest = build_manifest(split, provenance);
    let all = split
        .set1_train
        .iter()
        .chain(&split.set1_test)
        .chain(&split.set2);
    for (entry, clip) in manifest.clips.iter().zip(all) {
        let path = dir.join(&entry.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, encode_features(&clip.features))?;
    }
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<(Manifest, DatasetSplit)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(manifest_path.clone()),
        _ => Error::Io(e),
    })?;
    let manifest = Manifest::from_json_str(&text)?;
    let mut split = DatasetSplit {
        frames: manifest.frames,
        dim: manifest.dim,
        n_classes: manifest.n_classes,
        n_views: manifest.n_views,
        set1_train: Vec::new(),
        set1_test: Vec::new(),
        set2: Vec::new(),
    };
    for entry in &manifest.clips {
        let path = dir.join(safe_relative(&entry.path)?);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.clone()),
            _ => Error::Io(e),
        })?;
        let clip = ClipSample {
            features: decode_features(&bytes, manifest.frames, manifest.dim)?,
            label: entry.label.clone(),
            view_id: entry.view,
            group: entry.group,
            seed: entry.seed,
        };
        match entry.split {
            SplitName::Set1Train => split.set1_train.push(clip),
            SplitName::Set1Test => split.set1_test.push(clip),
            SplitName::Set2 => split.set2.push(clip),
        }
    }
    Ok((manifest, split))
}
