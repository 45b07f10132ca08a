use std::path::Path;
use std::process::Command;

fn hardsplit(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hardsplit"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

const CONFIG: &str = r#"
seed = 3

[data]
format = "synthetic"
n_per_class = 150
dim = 5

[retrain.shape]
encoder = [16, 8]
projection = [8, 4]
auxiliary = [8, 4]

[retrain.contrastive]
max_epochs = 10
patience = 3
learning_rate = 0.05

[retrain.auxiliary]
max_epochs = 10
patience = 3
learning_rate = 0.05
"#;

#[test]
fn stages_run_from_one_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    for cmd in ["synth", "train-base", "calibrate", "split", "classic-retrain", "guided-retrain"] {
        let out = hardsplit(&["--config", "exp.toml", "--out", "out", cmd], dir.path());
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out_dir = dir.path().join("out");
    for f in ["data.csv", "base_report.json", "calibration.json", "split.json", "pipeline.hspl", "table.csv"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let table = std::fs::read_to_string(out_dir.join("table.csv")).unwrap();
    assert!(table.starts_with("scope,A,F1,errors,ΔErrors,reduction"));
    assert!(table.contains("difficult/guided"));

    let out = hardsplit(
        &["--out", "out", "predict", "--pipeline", "out/pipeline.hspl", "--input", "out/data.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let preds = std::fs::read_to_string(out_dir.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 301);
    assert!(preds.contains("auxiliary") || preds.contains("base"));

    let out = hardsplit(
        &["--out", "out", "evaluate", "--pipeline", "out/pipeline.hspl", "--input", "out/data.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("accuracy"));
}

#[test]
fn seed_flag_changes_and_fixes_results() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    let run = |seed: &str, out: &str| {
        let o = hardsplit(&["--config", "exp.toml", "--seed", seed, "--out", out, "run"], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(dir.path().join(out).join("report.json")).unwrap()
    };
    assert_eq!(run("4", "a"), run("4", "b"));
    assert_ne!(run("4", "a"), run("5", "c"));
}

#[test]
fn failures_exit_nonzero_with_stage_tag() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "seed = \"x\"\n").unwrap();
    let out = hardsplit(&["--config", "bad.toml", "run"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[config]"));

    std::fs::write(dir.path().join("csv.toml"), "[data]\nformat = \"csv\"\npath = \"missing.csv\"\n").unwrap();
    let out = hardsplit(&["--config", "csv.toml", "train-base"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[load]"));

    let out = hardsplit(&["predict", "--pipeline", "nope.hspl", "--input", "x.csv"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[persist]"));

    let out = hardsplit(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
