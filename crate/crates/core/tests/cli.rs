//! Command-line behavior: exit codes, output layout and the run manifest.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fairnb(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairnb")).args(args).current_dir(cwd).output().unwrap()
}

#[test]
fn simulate_writes_series_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairnb(&["simulate", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for f in ["sim_series.csv", "sim_argmax.csv", "config.toml", "manifest.toml"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let argmax = fs::read_to_string(run.join("sim_argmax.csv")).unwrap();
    assert!(argmax.starts_with("setting,subgroup,metric,threshold"));
    assert!(argmax.contains("demographic_parity,under,net_benefit,0.106"));
    let manifest: toml::Value = toml::from_str(&fs::read_to_string(run.join("manifest.toml")).unwrap()).unwrap();
    assert_eq!(manifest["status"].as_str(), Some("ok"));
    assert_eq!(manifest["command"].as_str(), Some("simulate"));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    let leftovers: Vec<_> = fs::read_dir(&run)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("unknown.toml"), "bogus = 1\n").unwrap();
    fs::write(dir.path().join("step.toml"), "[simulate]\nstep = 0.3\n").unwrap();
    for cfg in ["unknown.toml", "step.toml", "missing.toml"] {
        let out = fairnb(&["simulate", "--config", cfg, "--out", "o"], dir.path());
        assert_eq!(out.status.code(), Some(2), "{cfg}");
    }
    assert_eq!(fairnb(&["no-such-command"], dir.path()).status.code(), Some(2));
    assert_eq!(fairnb(&["evaluate", "--out", "o"], dir.path()).status.code(), Some(2));
}

#[test]
fn unreadable_model_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("model.txt"), "not a model\n").unwrap();
    fs::write(dir.path().join("cohort.csv"), "id,group,t,event,f0\n0,a,1.0,1,0.5\n1,a,3.0,0,0.1\n").unwrap();
    fs::write(
        dir.path().join("cfg.toml"),
        "[cohort]\npath = \"cohort.csv\"\nhorizon = 2.0\n\n[evaluate]\nmodels = [\"model.txt\"]\n",
    )
    .unwrap();
    let out = fairnb(&["evaluate", "--config", "cfg.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn training_divergence_exits_with_three_and_records_failure() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.toml"),
        r#"
[synth]
feature_dim = 2
event_coefs = [0.7, -0.3]
horizon = 5.0
seed = 1

[[synth.groups]]
label = "a"
count = 300
horizon_risk = 0.2
censoring_rate = 0.05

[[synth.groups]]
label = "b"
count = 300
horizon_risk = 0.3
censoring_rate = 0.05

[split]
train = 0.625
validation = 0.125
test = 0.25
n_train_folds = 2
seed = 0

[train]
optimizer = "sgd"
learning_rate = 1e300
weight_decay = 1.0
max_epochs = 3
"#,
    )
    .unwrap();
    let out = fairnb(&["train", "--config", "cfg.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("o").join("manifest.toml")).unwrap();
    assert!(text.contains("status = \"failed\""), "{text}");
}

#[test]
fn seed_override_changes_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let hash = |seed: &str, out: &str| {
        assert!(fairnb(&["simulate", "--seed", seed, "--out", out], dir.path()).status.success());
        let m: toml::Value = toml::from_str(&fs::read_to_string(dir.path().join(out).join("manifest.toml")).unwrap()).unwrap();
        m["config_hash"].as_str().unwrap().to_string()
    };
    assert_ne!(hash("1", "a"), hash("2", "b"));
}
