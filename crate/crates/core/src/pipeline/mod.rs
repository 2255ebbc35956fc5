//! Experiment orchestration: data preparation, training, evaluation, run
//! records and run matrices.

pub mod config;
pub mod eval;
pub mod report;
pub mod train;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    AblateConfig, DatasetConfig, EvalConfig, ExperimentConfig, HeadSpec, Subset, TrainConfig,
    TrainMode,
};
pub use eval::{direct_migration_eval, evaluate_composite, evaluate_single, score_samples};
pub use report::{load_records, ComparisonTable, TableRow};
pub use train::{imagination_candidates, train_imagine, train_single, Trained};

use crate::dataset::load_dataset;
use crate::error::{Error, Result};
use crate::fusion::FusionModel;
use crate::label_space::{build_label_space, LabelSpace, LabelSpaceConfig};
use crate::metrics::EvalReport;
use crate::synth::{make_prototypes, synth_split, DatasetSplit};

pub const RECORD_FILE: &str = "record.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const RECORD_FORMAT: &str = "imaginenet-run";

pub fn load_label_space(cfg: &ExperimentConfig) -> Result<LabelSpace> {
    let ls = match &cfg.label_space {
        Some(path) => LabelSpaceConfig::load(path)?,
        None => LabelSpaceConfig::default(),
    };
    build_label_space(&ls)
}

/// Synthesises the configured split, rounded through `f32` so it matches
/// what `gen-data` writes to disk bit for bit.
pub fn synthesize(cfg: &ExperimentConfig, space: &LabelSpace) -> Result<DatasetSplit> {
    let d = &cfg.dataset;
    let bank = make_prototypes(cfg.data_seed(), space.n_classes(), d.dim)?.with_views(d.n_views, d.view_angle);
    let mut split = synth_split(&bank, space, d.counts(), &d.synth_params(), d.n_views, cfg.data_seed())?;
    split.quantize_f32();
    Ok(split)
}

/// Label space plus data: loaded from `data_dir` when set, otherwise
/// synthesised.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(LabelSpace, DatasetSplit)> {
    let space = load_label_space(cfg)?;
    let split = match &cfg.data_dir {
        Some(dir) => load_dataset(dir)?.1,
        None => synthesize(cfg, &space)?,
    };
    if split.n_classes != space.n_classes() {
        return Err(Error::Config(format!(
            "dataset has {} classes, label space {}",
            split.n_classes,
            space.n_classes()
        )));
    }
    Ok((space, split))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub macro_map: f64,
    pub mmit_map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub format: String,
    pub tag: String,
    pub config_hash: String,
    pub mode: TrainMode,
    pub seed: u64,
    pub baseline: Option<String>,
    pub status: RunStatus,
    pub loss_curve: Vec<f64>,
    /// Set-2 metrics on the configured subset.
    pub headline: Option<Headline>,
    pub reports: BTreeMap<String, EvalReport>,
    pub checkpoint_sha256: Option<String>,
    pub wall_time_secs: f64,
    /// Full effective config, for provenance.
    pub config: ExperimentConfig,
}

impl RunRecord {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            format: RECORD_FORMAT.into(),
            tag: cfg.tag.clone(),
            config_hash: cfg.config_hash()?,
            mode: cfg.train.mode,
            seed: cfg.seed,
            baseline: cfg.baseline.clone(),
            status: RunStatus::Ok,
            loss_curve: Vec::new(),
            headline: None,
            reports: BTreeMap::new(),
            checkpoint_sha256: None,
            wall_time_secs: 0.0,
            config: cfg.clone(),
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let record: Self = serde_json::from_str(text)?;
        if record.format != RECORD_FORMAT {
            return Err(Error::Config(format!("not a run record: format {:?}", record.format)));
        }
        Ok(record)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    /// `<tag>-<first 12 hex of the config hash>`.
    pub fn dir_name(&self) -> String {
        format!("{}-{}", self.tag, &self.config_hash[..12])
    }
}

/// A finished run: the trained model and every report computed for it.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: FusionModel,
    pub loss_curve: Vec<f64>,
    pub reports: BTreeMap<String, EvalReport>,
}

pub fn report_name(subset: Subset) -> String {
    format!("set2_{}", subset.slug())
}

/// Trains per `cfg.train.mode` and evaluates on every Set-2 subset (plus
/// held-out Set-1 for single-class runs).
pub fn execute(cfg: &ExperimentConfig, space: &LabelSpace, data: &DatasetSplit) -> Result<RunOutput> {
    let trained = match cfg.train.mode {
        TrainMode::Single => train_single(cfg, space, data)?,
        TrainMode::Imagine => train_imagine(cfg, space, data)?,
    };
    let views = cfg.eval.views.as_deref();
    let mut reports = BTreeMap::new();
    if cfg.train.mode == TrainMode::Single {
        reports.insert("set1_test".to_string(), evaluate_single(&trained.model, &data.set1_test, views)?);
    }
    for subset in Subset::ALL {
        let report = evaluate_composite(&trained.model, &data.set2, subset, views)?;
        reports.insert(report_name(subset), report);
    }
    Ok(RunOutput {
        model: trained.model,
        loss_curve: trained.loss_curve,
        reports,
    })
}

/// Writes one report as `<name>.json` and `<name>.csv`.
pub fn write_report(dir: &Path, name: &str, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{name}.json")), report.to_json_string()?)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    std::fs::write(dir.join(format!("{name}.csv")), csv)?;
    Ok(())
}

/// Runs one experiment. Config and data problems are errors; failures
/// during training or evaluation come back as a failed record. With
/// `results_dir`, the record, checkpoint and reports land in
/// `<results_dir>/<tag>-<hash>/`.
pub fn run_experiment(cfg: &ExperimentConfig, results_dir: Option<&Path>) -> Result<RunRecord> {
    cfg.validate()?;
    let (space, data) = prepare_data(cfg)?;
    run_prepared(cfg, &space, &data, results_dir)
}

fn run_prepared(
    cfg: &ExperimentConfig,
    space: &LabelSpace,
    data: &DatasetSplit,
    results_dir: Option<&Path>,
) -> Result<RunRecord> {
    let mut record = RunRecord::new(cfg)?;
    let start = Instant::now();
    let outcome = execute(cfg, space, data);
    record.wall_time_secs = start.elapsed().as_secs_f64();
    let run_dir = results_dir.map(|d| d.join(record.dir_name()));
    match outcome {
        Ok(out) => {
            record.loss_curve = out.loss_curve;
            let headline = &out.reports[&report_name(cfg.eval.subset)];
            record.headline = match (headline.macro_map, headline.mmit_map) {
                (Some(macro_map), Some(mmit_map)) => Some(Headline { macro_map, mmit_map }),
                _ => None,
            };
            if let Some(dir) = &run_dir {
                record.checkpoint_sha256 = Some(out.model.save(&dir.join(CHECKPOINT_FILE))?);
                for (name, report) in &out.reports {
                    write_report(dir, name, report)?;
                }
            } else {
                use sha2::{Digest, Sha256};
                record.checkpoint_sha256 = Some(hex::encode(Sha256::digest(out.model.to_bytes()?)));
            }
            record.reports = out.reports;
        }
        Err(e) => {
            log::error!("run {} failed: {e}", cfg.tag);
            record.status = RunStatus::Failed { reason: e.to_string() };
        }
    }
    if let Some(dir) = &run_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RECORD_FILE), record.to_json_string()?)?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    }
    Ok(record)
}

fn failed_record(cfg: &ExperimentConfig, e: &Error) -> RunRecord {
    let mut record = RunRecord::new(cfg).unwrap_or_else(|_| RunRecord {
        format: RECORD_FORMAT.into(),
        tag: cfg.tag.clone(),
        config_hash: "0".repeat(64),
        mode: cfg.train.mode,
        seed: cfg.seed,
        baseline: cfg.baseline.clone(),
        status: RunStatus::Ok,
        loss_curve: Vec::new(),
        headline: None,
        reports: BTreeMap::new(),
        checkpoint_sha256: None,
        wall_time_secs: 0.0,
        config: cfg.clone(),
    });
    record.status = RunStatus::Failed { reason: e.to_string() };
    record
}

/// Runs every config on a pool of `jobs` workers (all cores when `None`).
/// Failed runs are recorded, not fatal. Records keep input order; the Δ
/// table is written to `results_dir` when given.
pub fn run_matrix(
    configs: &[ExperimentConfig],
    jobs: Option<usize>,
    results_dir: Option<&Path>,
) -> Result<(Vec<RunRecord>, ComparisonTable)> {
    if configs.is_empty() {
        return Err(Error::Config("empty run matrix".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start worker pool: {e}")))?;

    // runs sharing data settings share one prepared dataset
    let mut data_cache: BTreeMap<String, Result<(LabelSpace, DatasetSplit), String>> = BTreeMap::new();
    for cfg in configs {
        let key = data_key(cfg);
        data_cache
            .entry(key)
            .or_insert_with(|| prepare_data(cfg).map_err(|e| e.to_string()));
    }

    let records: Vec<RunRecord> = pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| {
                let prepared = &data_cache[&data_key(cfg)];
                let result = cfg.validate().and_then(|_| match prepared {
                    Ok((space, data)) => run_prepared(cfg, space, data, results_dir),
                    Err(msg) => Err(Error::Invalid(msg.clone())),
                });
                result.unwrap_or_else(|e| failed_record(cfg, &e))
            })
            .collect()
    });
    let table = ComparisonTable::from_records(&records);
    if let Some(dir) = results_dir {
        table.write(dir)?;
    }
    Ok((records, table))
}

fn data_key(cfg: &ExperimentConfig) -> String {
    let parts = (
        cfg.data_seed(),
        &cfg.dataset,
        &cfg.label_space,
        cfg.data_dir.as_ref().map(PathBuf::as_path),
    );
    serde_json::to_string(&parts).unwrap_or_default()
}
