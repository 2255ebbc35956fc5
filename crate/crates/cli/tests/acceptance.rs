//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1-4, 8 and 9 are exact properties and always gate. Criteria 5-7
//! are directional comparisons on the synthetic benchmark; their lines
//! report the measured numbers, and they gate only with
//! `ACCEPTANCE_STRICT=1`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use imaginenet::fusion::AggregationKind;
use imaginenet::pipeline::{run_experiment, ExperimentConfig, RunRecord};
use imaginenet::selftest::{self, Check};
use sha2::{Digest, Sha256};

struct Outcome {
    id: u8,
    passed: bool,
    gating: bool,
    detail: String,
}

// written straight to the handle so the lines survive output capture
fn emit(o: &Outcome) {
    let verdict = if o.passed { "PASS" } else { "FAIL" };
    let note = if o.gating { "" } else { " [directional, reported]" };
    let line = format!("acceptance criterion {}: {verdict} {}{note}\n", o.id, o.detail);
    let _ = std::io::stdout().write_all(line.as_bytes());
}

fn from_checks(id: u8, checks: &[Check], extra: &str) -> Outcome {
    let worst = checks.iter().find(|c| !c.passed).unwrap_or(&checks[0]);
    Outcome {
        id,
        passed: checks.iter().all(|c| c.passed),
        gating: true,
        detail: format!("{} checks{extra}; e.g. {worst}", checks.len()),
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn benchmark(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join(name)).unwrap()
}

fn macro_all(r: &RunRecord) -> f64 {
    r.reports["set2_all"].macro_map.unwrap()
}

fn criterion_5_and_7() -> (Outcome, Outcome) {
    let start = Instant::now();
    let imagine = run_experiment(&benchmark("benchmark.toml"), None).unwrap();
    let direct = run_experiment(&benchmark("direct.toml"), None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let gap = macro_all(&imagine) - macro_all(&direct);
    let five = Outcome {
        id: 5,
        passed: gap >= 0.05 && secs < 600.0,
        gating: false,
        detail: format!(
            "ImagineNet-FC mAP {:.4} vs direct {:.4}: gap {gap:+.4} (need >= +0.05), {secs:.1}s",
            macro_all(&imagine),
            macro_all(&direct)
        ),
    };
    let mmit = |name: &str| imagine.reports[name].mmit_map.unwrap();
    let (p, pt, all) = (mmit("set2_pairs"), mmit("set2_pairs_triples"), mmit("set2_all"));
    let seven = Outcome {
        id: 7,
        passed: p >= pt && pt >= all,
        gating: false,
        detail: format!("mmit mAP pairs {p:.4} >= pairs+triples {pt:.4} >= all {all:.4}"),
    };
    (five, seven)
}

fn criterion_6() -> Outcome {
    let mut parts = Vec::new();
    let mut passed = true;
    for seed in 1..=3 {
        let mut agg1 = benchmark("benchmark.toml");
        agg1.seed = seed;
        let mut vanilla = agg1.clone();
        vanilla.aggregation.kind = AggregationKind::VanillaSum;
        let a = macro_all(&run_experiment(&agg1, None).unwrap());
        let v = macro_all(&run_experiment(&vanilla, None).unwrap());
        passed &= a >= v - 0.01;
        parts.push(format!("s{seed} {a:.4} vs {v:.4} ({:+.4})", a - v));
    }
    Outcome {
        id: 6,
        passed,
        gating: false,
        detail: format!("Agg-1 vs vanilla sum mAP, need >= -0.01: {}", parts.join(", ")),
    }
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if !path.ends_with("record.json") {
                // records carry wall time; everything else must match
                out.push((path.strip_prefix(dir).unwrap().to_owned(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_8() -> Outcome {
    let smoke = configs_dir().join("smoke.toml");
    let smoke = smoke.to_str().unwrap();
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("gen-data", vec!["gen-data", "--config", smoke, "--out", "out"]),
        ("train-single", vec!["train-single", "--config", smoke, "--out", "out"]),
        ("train-imagine", vec!["train-imagine", "--config", smoke, "--out", "out"]),
        ("ablate", vec!["ablate", "--config", smoke, "--out", "out", "--jobs", "2"]),
    ];
    let mut problems = Vec::new();
    let mut compared = 0;
    for (name, args) in &runs {
        let mut trees = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let o = Command::new(env!("CARGO_BIN_EXE_imaginenet"))
                .args(args)
                .current_dir(dir.path())
                .env_remove("IMAGINE_SEED")
                .output()
                .unwrap();
            assert!(o.status.success(), "{name}: {o:?}");
            trees.push(files_under(&dir.path().join("out")));
        }
        compared += trees[0].len();
        if trees[0] != trees[1] {
            problems.push(name.to_string());
        }
    }

    // eval from one checkpoint twice, and checkpoint hashes across runs
    let dir = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    let mut evals = Vec::new();
    for out in ["a", "b"] {
        let o = Command::new(env!("CARGO_BIN_EXE_imaginenet"))
            .args(["train-imagine", "--config", smoke, "--out", out])
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(o.status.success());
        let run = std::fs::read_dir(dir.path().join(out)).unwrap().next().unwrap().unwrap().path();
        let ckpt = run.join("model.ckpt");
        hashes.push(hex::encode(Sha256::digest(std::fs::read(&ckpt).unwrap())));
        let record = RunRecord::from_json_str(&std::fs::read_to_string(run.join("record.json")).unwrap()).unwrap();
        assert_eq!(record.checkpoint_sha256.as_deref(), Some(hashes.last().unwrap().as_str()));
        let o = Command::new(env!("CARGO_BIN_EXE_imaginenet"))
            .args(["eval", "--config", smoke, "--checkpoint", ckpt.to_str().unwrap(), "--subset", "pairs"])
            .output()
            .unwrap();
        assert!(o.status.success());
        evals.push(o.stdout);
    }
    if hashes[0] != hashes[1] {
        problems.push("checkpoint hash".into());
    }
    if evals[0] != evals[1] {
        problems.push("eval".into());
    }
    Outcome {
        id: 8,
        passed: problems.is_empty(),
        gating: true,
        detail: if problems.is_empty() {
            format!("{} subcommands x2, {compared} artifacts byte-identical, checkpoint {}", runs.len() + 1, &hashes[0][..12])
        } else {
            format!("differs: {}", problems.join(", "))
        },
    }
}

#[test]
fn acceptance() {
    let mut outcomes = Vec::new();

    let start = Instant::now();
    let grads = selftest::gradient_checks(10).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut one = from_checks(1, &grads, &format!(", {secs:.2}s"));
    one.passed &= secs < 60.0;
    outcomes.push(one);
    outcomes.push(from_checks(2, &selftest::metric_oracle(200).unwrap(), ""));
    outcomes.push(from_checks(3, &selftest::label_space_checks().unwrap(), ""));
    outcomes.push(from_checks(4, &selftest::degeneration_checks().unwrap(), ""));
    let (five, seven) = criterion_5_and_7();
    outcomes.push(five);
    outcomes.push(criterion_6());
    outcomes.push(seven);
    outcomes.push(criterion_8());
    outcomes.push(from_checks(9, &[selftest::sketch_fidelity().unwrap()], ""));

    for o in &outcomes {
        emit(o);
    }
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let failed: Vec<u8> = outcomes
        .iter()
        .filter(|o| !o.passed && (o.gating || strict))
        .map(|o| o.id)
        .collect();
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
