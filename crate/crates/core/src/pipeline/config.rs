//! Experiment configuration: one TOML file per experiment.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::{AggregationConfig, AggregationKind, HeadConfig};
use crate::nn::{LossKind, LrStep};
use crate::synth::{SplitCounts, SynthParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Defaults to the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
    pub dim: usize,
    pub frames: usize,
    pub noise_sigma: f64,
    pub temporal_amplitude: f64,
    pub temporal_cycles: f64,
    pub n_views: usize,
    /// Givens angle (radians) separating camera views.
    pub view_angle: f64,
    /// Noise multiplier per view; views past the end use 1.0.
    pub view_noise: Vec<f64>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub per_composite: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let synth = SynthParams::default();
        let counts = SplitCounts::default();
        Self {
            seed: None,
            dim: 128,
            frames: synth.frames,
            noise_sigma: synth.noise_sigma,
            temporal_amplitude: synth.temporal_amplitude,
            temporal_cycles: synth.temporal_cycles,
            n_views: 1,
            view_angle: 0.3,
            view_noise: synth.view_noise,
            train_per_class: counts.train_per_class,
            test_per_class: counts.test_per_class,
            per_composite: counts.per_composite,
        }
    }
}

impl DatasetConfig {
    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            frames: self.frames,
            noise_sigma: self.noise_sigma,
            temporal_amplitude: self.temporal_amplitude,
            temporal_cycles: self.temporal_cycles,
            view_noise: self.view_noise.clone(),
        }
    }

    pub fn counts(&self) -> SplitCounts {
        SplitCounts {
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            per_composite: self.per_composite,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSpec {
    /// `FC`, `SA`, `SAx2`, `CA`, `CA+SA`, ...
    pub variant: String,
    pub pos_emb: bool,
    pub hidden: usize,
    pub ffn_mult: usize,
    pub projections: bool,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            variant: "FC".into(),
            pos_emb: true,
            hidden: 512,
            ffn_mult: 4,
            projections: false,
        }
    }
}

impl HeadSpec {
    pub fn to_head_config(&self, n_classes: usize, frames: usize, dim: usize) -> Result<HeadConfig> {
        let (kind, depth) = HeadConfig::parse_variant(&self.variant)?;
        let cfg = HeadConfig {
            kind,
            depth,
            pos_emb: self.pos_emb,
            hidden: self.hidden,
            n_classes,
            frames,
            input_dim: dim,
            ffn_mult: self.ffn_mult,
            projections: self.projections,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Single-class classifier on Set-1, evaluated on Set-2 by direct
    /// migration.
    Single,
    /// Imagined composites built from pairs of Set-1 clips.
    Imagine,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Single => "single",
            TrainMode::Imagine => "imagine",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Defaults to CE for single-class runs and BCE for imagination.
    #[serde(default)]
    pub loss: Option<LossKind>,
    pub margin: f64,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub schedule: Vec<LrStep>,
    pub batch: usize,
    /// Clips combined per imagined sample (2 to 4).
    pub members: usize,
    /// Imagine only combinations that survive the exclusion list.
    pub exclude_invalid_pairs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Imagine,
            loss: None,
            margin: 1.0,
            epochs: 60,
            lr: 0.001,
            momentum: 0.9,
            schedule: vec![
                LrStep { epoch: 20, factor: 0.1 },
                LrStep { epoch: 40, factor: 0.1 },
            ],
            batch: 32,
            members: 2,
            exclude_invalid_pairs: true,
        }
    }
}

impl TrainConfig {
    pub fn loss_kind(&self) -> LossKind {
        self.loss.unwrap_or(match self.mode {
            TrainMode::Single => LossKind::Ce,
            TrainMode::Imagine => LossKind::Bce,
        })
    }
}

/// Which Set-2 composites an evaluation covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    #[serde(rename = "pairs")]
    Pairs,
    #[serde(rename = "pairs+triples")]
    PairsTriples,
    #[serde(rename = "all")]
    All,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Pairs, Subset::PairsTriples, Subset::All];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Pairs => "pairs",
            Subset::PairsTriples => "pairs+triples",
            Subset::All => "all",
        }
    }

    /// Largest composite size included.
    pub fn max_members(self) -> usize {
        match self {
            Subset::Pairs => 2,
            Subset::PairsTriples => 3,
            Subset::All => usize::MAX,
        }
    }

    /// File-name friendly form.
    pub fn slug(self) -> &'static str {
        match self {
            Subset::Pairs => "pairs",
            Subset::PairsTriples => "pairs_triples",
            Subset::All => "all",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subset::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown subset {s:?} (pairs, pairs+triples, all)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub subset: Subset,
    /// Camera views fused at evaluation; all views when absent.
    #[serde(default)]
    pub views: Option<Vec<usize>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            subset: Subset::All,
            views: None,
        }
    }
}

/// Matrix expanded by `ablate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub heads: Vec<String>,
    pub aggregations: Vec<AggregationKind>,
    pub pos_emb: Vec<bool>,
    /// Extra seeds; the experiment seed when empty.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Adds a direct-migration run per seed as the Δ baseline.
    pub with_baseline: bool,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            heads: vec!["FC".into(), "SA".into(), "SAx2".into(), "CA".into()],
            aggregations: vec![AggregationKind::WeightedRandom, AggregationKind::VanillaSum],
            pos_emb: vec![true],
            seeds: Vec::new(),
            with_baseline: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tag: String,
    pub seed: u64,
    /// Tag of the run Δ columns compare against.
    pub baseline: Option<String>,
    /// Label-space TOML; the bundled default when absent. Relative paths
    /// resolve against the experiment file.
    pub label_space: Option<PathBuf>,
    /// Dataset written by `gen-data`; synthesised in memory when absent.
    pub data_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub head: HeadSpec,
    pub aggregation: AggregationConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tag: "experiment".into(),
            seed: 1,
            baseline: None,
            label_space: None,
            data_dir: None,
            dataset: DatasetConfig::default(),
            head: HeadSpec::default(),
            aggregation: AggregationConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config; relative paths inside become relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_owned()),
            _ => Error::Io(e),
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.label_space, &mut cfg.data_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.tag.is_empty() || self.tag.contains(['/', '\\']) {
            return bad(format!("tag {:?} must be a non-empty file-name fragment", self.tag));
        }
        let t = &self.train;
        if t.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if t.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if !(2..=4).contains(&t.members) {
            return bad(format!("members must be 2..=4, got {}", t.members));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) || !(0.0..1.0).contains(&t.momentum) {
            return bad("lr must be positive and momentum in [0, 1)".into());
        }
        if !(t.margin > 0.0 && t.margin.is_finite()) {
            return bad("margin must be positive".into());
        }
        if t.mode == TrainMode::Imagine && t.loss_kind() != LossKind::Bce {
            return bad("imagined composites carry multi-hot targets; use the bce loss".into());
        }
        let d = &self.dataset;
        if d.dim < 2 || d.frames == 0 || d.n_views == 0 {
            return bad("dataset needs dim >= 2, frames >= 1, n_views >= 1".into());
        }
        if d.train_per_class == 0 || d.test_per_class == 0 || d.per_composite == 0 {
            return bad("dataset counts must be >= 1".into());
        }
        self.dataset.synth_params().validate()?;
        HeadConfig::parse_variant(&self.head.variant)?;
        if let Some(views) = &self.eval.views {
            if views.is_empty() {
                return bad("eval.views must not be empty".into());
            }
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.dataset.seed.unwrap_or(self.seed)
    }

    /// Canonical JSON: object keys sorted, so the hash ignores field order
    /// in the source file.
    pub fn canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&value)?)
    }

    pub fn config_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_json()?.as_bytes())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Expands the `[ablate]` matrix: heads × aggregations × pos_emb × seeds,
    /// plus an optional direct-migration baseline per seed.
    pub fn expand_ablation(&self) -> Vec<ExperimentConfig> {
        let a = &self.ablate;
        let seeds = if a.seeds.is_empty() { vec![self.seed] } else { a.seeds.clone() };
        let multi_seed = seeds.len() > 1;
        let mut out = Vec::new();
        for &seed in &seeds {
            let suffix = if multi_seed { format!("-s{seed}") } else { String::new() };
            let baseline_tag = format!("direct{suffix}");
            if a.with_baseline {
                let mut cfg = self.clone();
                cfg.seed = seed;
                cfg.tag = baseline_tag.clone();
                cfg.baseline = None;
                cfg.train.mode = TrainMode::Single;
                cfg.train.loss = None;
                cfg.head.variant = "FC".into();
                out.push(cfg);
            }
            for head in &a.heads {
                for &agg in &a.aggregations {
                    for &pos in &a.pos_emb {
                        let mut cfg = self.clone();
                        cfg.seed = seed;
                        cfg.train.mode = TrainMode::Imagine;
                        cfg.head.variant = head.clone();
                        cfg.head.pos_emb = pos;
                        cfg.aggregation.kind = agg;
                        let pos_tag = if pos { "" } else { "-nopos" };
                        cfg.tag = format!("{head}-{}{pos_tag}{suffix}", agg.short_name());
                        cfg.baseline = a.with_baseline.then(|| baseline_tag.clone());
                        out.push(cfg);
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(cfg.train.epochs, 60);
        assert_eq!(cfg.train.lr, 0.001);
    }

    #[test]
    fn hash_ignores_field_order() {
        let a = ExperimentConfig::from_toml_str("tag = \"x\"\nseed = 3\n[train]\nmode = \"single\"\nloss = \"ce\"\nmargin = 1.0\nepochs = 5\nlr = 0.1\nmomentum = 0.9\nschedule = []\nbatch = 4\nmembers = 2\nexclude_invalid_pairs = true\n").unwrap();
        let b = ExperimentConfig::from_toml_str("seed = 3\ntag = \"x\"\n[train]\nbatch = 4\nmembers = 2\nexclude_invalid_pairs = true\nmode = \"single\"\nloss = \"ce\"\nmargin = 1.0\nschedule = []\nepochs = 5\nlr = 0.1\nmomentum = 0.9\n").unwrap();
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        let mut c = a.clone();
        c.seed = 4;
        assert_ne!(a.config_hash().unwrap(), c.config_hash().unwrap());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml_str("tag = \"x\"\nseed = 1\nbogus = 2\n").is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.train.epochs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.train.loss = Some(LossKind::Ce);
        assert!(cfg.validate().is_err());
        cfg.train.mode = TrainMode::Single;
        assert!(cfg.validate().is_ok());
        let mut cfg = ExperimentConfig::default();
        cfg.head.variant = "MLP".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ablation_product() {
        let cfg = ExperimentConfig::default();
        let runs = cfg.expand_ablation();
        assert_eq!(runs.len(), 8);
        let tags: Vec<_> = runs.iter().map(|r| r.tag.as_str()).collect();
        assert_eq!(tags[0], "FC-agg1");
        assert_eq!(tags[7], "CA-sum");
        let mut cfg = ExperimentConfig::default();
        cfg.ablate.seeds = vec![1, 2, 3];
        cfg.ablate.pos_emb = vec![true, false];
        cfg.ablate.with_baseline = true;
        let runs = cfg.expand_ablation();
        assert_eq!(runs.len(), 3 * (1 + 16));
        assert_eq!(runs[1].baseline.as_deref(), Some("direct-s1"));
        assert!(runs.iter().any(|r| r.tag == "SAx2-sum-nopos-s3"));
    }

    #[test]
    fn subsets_parse() {
        for s in Subset::ALL {
            assert_eq!(s.as_str().parse::<Subset>().unwrap(), s);
        }
        assert!("triples".parse::<Subset>().is_err());
    }
}
