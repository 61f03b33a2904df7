use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prunekit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_data(cwd: &Path) {
    ok(
        &[
            "gen-data", "--out-dir", "data", "--set", "frames=1200", "--set", "test_frames=300", "--set",
            "kws_environment_frames=3000", "--set", "kws_environment_bursts=6",
        ],
        cwd,
    );
}

#[test]
fn inspect_reports_full_scale_parameter_count() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["inspect", "--arch", "858,512,512,512,512,3", "--out-dir", "i"], tmp.path());
    let v = json(&tmp.path().join("i/inspect.json"));
    assert_eq!(v["param_count"], 1_229_315);
    let mib = v["dense_mib"].as_f64().unwrap();
    assert!((mib - 4.69).abs() < 0.01, "{mib}");
}

#[test]
fn pruned_layers_land_within_one_granule_of_target() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    small_data(cwd);
    ok(&["train", "--data", "data/train.csv", "--out-dir", "t", "--set", "epochs=2"], cwd);
    ok(&["prune", "--model", "t/model.txt", "--data", "data/train.csv", "--out-dir", "p", "--set", "target=0.10"], cwd);
    ok(&["inspect", "--model", "p/model.txt", "--out-dir", "i"], cwd);
    let v = json(&cwd.join("i/inspect.json"));
    for layer in v["layers"].as_array().unwrap() {
        let weights = layer["weights"].as_u64().unwrap() as f64;
        let rate = layer["remain_rate"].as_f64().unwrap();
        // One selection granule is a single weight of that layer.
        assert!((rate - 0.10).abs() <= 1.0 / weights + 1e-12, "{layer}");
    }
    let history = std::fs::read_to_string(cwd.join("p/history.csv")).unwrap();
    assert!(history.lines().count() >= 3);
}

#[test]
fn ground_truth_kws_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    small_data(cwd);
    ok(&["eval-kws", "--kws-dir", "data/kws", "--out-dir", "k"], cwd);
    let roc = std::fs::read_to_string(cwd.join("k/roc.csv")).unwrap();
    let rows: Vec<Vec<f64>> = roc
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 20);
    for r in rows {
        assert_eq!((r[1], r[2]), (1.0, 0.0));
    }
}

#[test]
fn manifest_is_written_even_when_the_command_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    std::fs::write(cwd.join("bad.csv"), "feature_dim,2\nnum_classes,2\n0,1.0\n").unwrap();
    let out = run(&["train", "--data", "bad.csv", "--out-dir", "t"], cwd);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
    let m = json(&cwd.join("t/manifest.json"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["config"]["epochs"], "10");
}

#[test]
fn config_errors_exit_non_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    let out = run(&["gen-data", "--set", "no_such_key=1"], cwd);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key"));
    let out = run(&["eval-frames", "--model", "missing.txt", "--data", "missing.csv"], cwd);
    assert!(!out.status.success());
    std::fs::write(cwd.join("c.txt"), "epochs 3\n").unwrap();
    let out = run(&["train", "--data", "x.csv", "--config", "c.txt"], cwd);
    assert!(!out.status.success());
}

#[test]
fn config_file_and_seed_flags_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    std::fs::write(cwd.join("c.txt"), "# small\narch = 10,4,3\nbytes_per_param = 8\n").unwrap();
    ok(&["inspect", "--config", "c.txt", "--seed", "5", "--out-dir", "i"], cwd);
    let m = json(&cwd.join("i/manifest.json"));
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["arch"], "10,4,3");
    let v = json(&cwd.join("i/inspect.json"));
    assert_eq!(v["dense_bytes"], (10 * 4 + 4 + 4 * 3 + 3) * 8);
}
