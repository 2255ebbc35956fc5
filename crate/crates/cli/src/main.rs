//! `imaginenet` command-line runner.
//!
//! Exit codes: 0 ok, 2 config error, 3 missing artifact, 4 run failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use imaginenet::dataset::{write_dataset, MANIFEST_FILE};
use imaginenet::fusion::FusionModel;
use imaginenet::pipeline::{
    evaluate_composite, load_records, prepare_data, report_name, run_matrix, synthesize, write_report,
    ComparisonTable, ExperimentConfig, RunRecord, Subset, TrainMode, RECORD_FILE,
};
use imaginenet::{selftest, Error};

#[derive(Parser)]
#[command(name = "imaginenet", version, about = "Composite action recognition from single-class clips")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment TOML; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, env = "IMAGINE_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise a dataset and write it to disk.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data")]
        out: PathBuf,
        /// Overwrite an existing dataset.
        #[arg(long)]
        force: bool,
    },
    /// Train a single-class classifier (direct migration baseline).
    TrainSingle(TrainArgs),
    /// Train on imagined composites.
    TrainImagine(TrainArgs),
    /// Score a checkpoint on Set-2.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// pairs, pairs+triples or all; the config subset when omitted.
        #[arg(long)]
        subset: Option<Subset>,
        /// Comma-separated camera views to fuse.
        #[arg(long, value_delimiter = ',')]
        views: Option<Vec<usize>>,
        /// Writes eval_<subset>.json/.csv here; prints JSON when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the `[ablate]` matrix from the config.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Worker threads; all processors when omitted.
        #[arg(long)]
        jobs: Option<usize>,
        /// Rerun matrix entries that already have a record.
        #[arg(long)]
        force: bool,
    },
    /// Rebuild the comparison table from the run records in a results dir.
    Report {
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Gradient checks, metric oracle, label-space counts, sketch fidelity.
    Selftest,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Retrain even when a record for this config exists.
    #[arg(long)]
    force: bool,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: anyhow::Error) -> Self {
        Self { code: 2, error }
    }

    fn run(error: anyhow::Error) -> Self {
        Self { code: 4, error }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Config(_)) | Some(Error::Label(_)) => 2,
            Some(Error::Missing(_)) => 3,
            Some(Error::Diverged { .. }) => 4,
            _ => 1,
        };
        Self { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
            // a missing config file is a config error, not a missing artifact
            Error::Missing(_) => Failure::usage(anyhow!("config file {} not found", path.display())),
            other => other.into(),
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gen_data(common: &Common, out: &Path, force: bool) -> CliResult {
    let cfg = load_config(common)?;
    if out.join(MANIFEST_FILE).exists() && !force {
        return Err(Failure::usage(anyhow!(
            "{} already holds a dataset (use --force to overwrite)",
            out.display()
        )));
    }
    let space = imaginenet::pipeline::load_label_space(&cfg)?;
    let split = synthesize(&cfg, &space)?;
    let provenance = serde_json::json!({
        "config_hash": cfg.config_hash()?,
        "seed": cfg.data_seed(),
    });
    let manifest = write_dataset(out, &split, provenance, force)?;
    println!(
        "wrote {} clips ({} set1_train, {} set1_test, {} set2) to {}",
        manifest.clips.len(),
        split.set1_train.len(),
        split.set1_test.len(),
        split.set2.len(),
        out.display()
    );
    Ok(())
}

fn existing_record(out: &Path, cfg: &ExperimentConfig) -> CliResult<Option<RunRecord>> {
    let hash = cfg.config_hash()?;
    let path = out.join(format!("{}-{}", cfg.tag, &hash[..12])).join(RECORD_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(RunRecord::from_json_str(&text).ok().filter(RunRecord::is_ok))
}

fn print_record(record: &RunRecord, out: &Path) {
    let dir = out.join(record.dir_name());
    match (&record.headline, &record.status) {
        (Some(h), _) => println!(
            "{}: {} mAP {:.4}, mmit mAP {:.4} on {} ({})",
            record.tag,
            record.mode,
            h.macro_map,
            h.mmit_map,
            record.config.eval.subset,
            dir.display()
        ),
        (None, status) => println!("{}: {status:?} ({})", record.tag, dir.display()),
    }
}

fn train(args: &TrainArgs, mode: TrainMode) -> CliResult {
    let mut cfg = load_config(&args.common)?;
    if cfg.train.mode != mode {
        cfg.train.mode = mode;
        cfg.train.loss = None;
    }
    cfg.validate()?;
    if !args.force {
        if let Some(record) = existing_record(&args.out, &cfg)? {
            log::info!("record for this config exists; use --force to retrain");
            print_record(&record, &args.out);
            return Ok(());
        }
    }
    let record = imaginenet::pipeline::run_experiment(&cfg, Some(&args.out))?;
    print_record(&record, &args.out);
    match &record.status {
        imaginenet::pipeline::RunStatus::Ok => Ok(()),
        imaginenet::pipeline::RunStatus::Failed { reason } => Err(Failure::run(anyhow!("run failed: {reason}"))),
    }
}

fn eval(
    common: &Common,
    checkpoint: &Path,
    subset: Option<Subset>,
    views: Option<Vec<usize>>,
    out: Option<&Path>,
) -> CliResult {
    let cfg = load_config(common)?;
    let (_, data) = prepare_data(&cfg)?;
    let model = FusionModel::load(checkpoint, data.dim)?;
    let subset = subset.unwrap_or(cfg.eval.subset);
    let views = views.or(cfg.eval.views.clone());
    let report = evaluate_composite(&model, &data.set2, subset, views.as_deref())?;
    match out {
        Some(dir) => {
            let name = format!("eval_{}", report_name(subset).trim_start_matches("set2_"));
            write_report(dir, &name, &report)?;
            println!(
                "mAP {:.4}, mmit mAP {:.4} on {subset} -> {}",
                report.macro_map.unwrap_or(f64::NAN),
                report.mmit_map.unwrap_or(f64::NAN),
                dir.join(format!("{name}.json")).display()
            );
        }
        None => print!("{}", report.to_json_string()?),
    }
    Ok(())
}

fn ablate(common: &Common, out: &Path, jobs: Option<usize>, force: bool) -> CliResult {
    let cfg = load_config(common)?;
    let configs = cfg.expand_ablation();
    let mut slots: Vec<Option<RunRecord>> = Vec::with_capacity(configs.len());
    for c in &configs {
        slots.push(if force { None } else { existing_record(out, c)? });
    }
    let todo: Vec<ExperimentConfig> = configs
        .iter()
        .zip(&slots)
        .filter(|(_, s)| s.is_none())
        .map(|(c, _)| c.clone())
        .collect();
    log::info!("{} runs, {} already recorded", configs.len(), configs.len() - todo.len());
    let mut fresh = if todo.is_empty() {
        Vec::new()
    } else {
        run_matrix(&todo, jobs, Some(out))?.0
    }
    .into_iter();
    let records: Vec<RunRecord> = slots
        .into_iter()
        .map(|s| s.or_else(|| fresh.next()).expect("one record per config"))
        .collect();
    let table = ComparisonTable::from_records(&records);
    table.write(out)?;
    print!("{}", table.to_text());
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        return Err(Failure::run(anyhow!("{failed} of {} runs failed", records.len())));
    }
    Ok(())
}

fn report(out: &Path) -> CliResult {
    let records = load_records(out)?;
    let table = ComparisonTable::from_records(&records);
    table.write(out)?;
    print!("{}", table.to_text());
    Ok(())
}

fn run_selftest() -> CliResult {
    let checks = selftest::run_all()?;
    for check in &checks {
        println!("{check}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        println!("FAIL ({failed} of {} checks)", checks.len());
        return Err(Failure::run(anyhow!("selftest failed")));
    }
    println!("PASS ({} checks)", checks.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::GenData { common, out, force } => gen_data(common, out, *force),
        Command::TrainSingle(args) => train(args, TrainMode::Single),
        Command::TrainImagine(args) => train(args, TrainMode::Imagine),
        Command::Eval {
            common,
            checkpoint,
            subset,
            views,
            out,
        } => eval(common, checkpoint, *subset, views.clone(), out.as_deref()),
        Command::Ablate { common, out, jobs, force } => ablate(common, out, *jobs, *force),
        Command::Report { out } => report(out),
        Command::Selftest => run_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
