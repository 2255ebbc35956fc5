use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
tag = "tiny"
seed = 4

[dataset]
dim = 16
frames = 4
noise_sigma = 0.3
train_per_class = 4
test_per_class = 2
per_composite = 1

[head]
hidden = 16

[train]
epochs = 3
lr = 0.3
batch = 8

[ablate]
heads = ["FC", "SA", "SAx2", "CA"]
aggregations = ["weighted_random", "vanilla_sum"]
"#;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imaginenet"))
        .args(args)
        .current_dir(dir)
        .env_remove("IMAGINE_SEED")
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_data_writes_both_sets() {
    let dir = setup();
    let o = bin(dir.path(), &["gen-data", "--config", "tiny.toml", "--out", "data"]);
    assert!(o.status.success(), "{o:?}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("data/manifest.json")).unwrap()).unwrap();
    let mut set1 = BTreeSet::new();
    let mut set2 = BTreeSet::new();
    for clip in manifest["clips"].as_array().unwrap() {
        let label = clip["label"].to_string();
        match clip["split"].as_str().unwrap() {
            "set2" => set2.insert(label),
            _ => set1.insert(label),
        };
    }
    assert_eq!(set1.len(), 14);
    assert_eq!(set2.len(), 74);

    let again = bin(dir.path(), &["gen-data", "--config", "tiny.toml", "--out", "data"]);
    assert_eq!(again.status.code(), Some(2));
    let forced = bin(dir.path(), &["gen-data", "--config", "tiny.toml", "--out", "data", "--force"]);
    assert!(forced.status.success());

    let other = bin(dir.path(), &["gen-data", "--config", "tiny.toml", "--out", "data2", "--seed", "2"]);
    assert!(other.status.success());
    let a = std::fs::read(dir.path().join("data/manifest.json")).unwrap();
    let b = std::fs::read(dir.path().join("data2/manifest.json")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn exit_codes() {
    let dir = setup();
    assert_eq!(bin(dir.path(), &["gen-data", "--config", "missing.toml"]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "tag = \"x\"\nunknown = 1\n").unwrap();
    assert_eq!(bin(dir.path(), &["train-single", "--config", "bad.toml"]).status.code(), Some(2));
    let o = bin(dir.path(), &["eval", "--config", "tiny.toml", "--checkpoint", "nope.ckpt"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(bin(dir.path(), &["report", "--out", "nothing"]).status.code(), Some(3));

    std::fs::write(dir.path().join("wild.toml"), TINY.replace("lr = 0.3", "lr = 1e200\nschedule = []")).unwrap();
    let o = bin(dir.path(), &["train-imagine", "--config", "wild.toml", "--out", "res"]);
    assert_eq!(o.status.code(), Some(4), "{o:?}");
}

#[test]
fn train_eval_report_round_trip() {
    let dir = setup();
    let o = bin(dir.path(), &["train-single", "--config", "tiny.toml", "--out", "res"]);
    assert!(o.status.success(), "{o:?}");
    let run = std::fs::read_dir(dir.path().join("res")).unwrap().next().unwrap().unwrap().path();
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("record.json")).unwrap()).unwrap();
    assert_eq!(record["mode"], "single");
    assert!(run.join("set1_test.json").is_file());

    // the checkpoint reproduces the stored report
    let ckpt = run.join("model.ckpt");
    let o = bin(dir.path(), &["eval", "--config", "tiny.toml", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let printed: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let stored: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("set2_all.json")).unwrap()).unwrap();
    assert_eq!(printed, stored);

    let o = bin(dir.path(), &["report", "--out", "res"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3, "{text}");
    assert!(dir.path().join("res/summary.csv").is_file());

    // a broken record is skipped, not fatal
    std::fs::create_dir_all(dir.path().join("res/junk")).unwrap();
    std::fs::write(dir.path().join("res/junk/record.json"), "{").unwrap();
    assert!(bin(dir.path(), &["report", "--out", "res"]).status.success());
}

#[test]
fn seed_flag_beats_environment() {
    let dir = setup();
    let run = |args: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_imaginenet"));
        cmd.args(args).current_dir(dir.path()).env_remove("IMAGINE_SEED");
        if let Some(v) = env {
            cmd.env("IMAGINE_SEED", v);
        }
        stdout(&cmd.output().unwrap())
    };
    let base = ["train-single", "--config", "tiny.toml", "--out", "res"];
    let from_env = run(&base, Some("11"));
    let from_flag = run(&[&base[..], &["--seed", "11"]].concat(), Some("12"));
    let default = run(&base, None);
    assert_eq!(from_env, from_flag);
    assert_ne!(from_env, default);
}

#[test]
fn ablate_runs_the_product_and_reuses_records() {
    let dir = setup();
    let o = bin(dir.path(), &["ablate", "--config", "tiny.toml", "--out", "abl", "--jobs", "2"]);
    assert!(o.status.success(), "{o:?}");
    let csv = std::fs::read_to_string(dir.path().join("abl/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    let records = std::fs::read_dir(dir.path().join("abl")).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(records, 8);

    let again = bin(dir.path(), &["ablate", "--config", "tiny.toml", "--out", "abl"]);
    assert!(again.status.success());
    assert_eq!(stdout(&o), stdout(&again));
}

#[test]
fn selftest_passes() {
    let dir = setup();
    let o = bin(dir.path(), &["selftest"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).lines().last().unwrap().starts_with("PASS"));
}
