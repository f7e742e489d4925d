use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridkernel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn line_count(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

fn out_arg(dir: &Path) -> String {
    dir.display().to_string()
}

#[test]
fn vle_data_writes_declared_rows_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hk(&["vle-data", "--n", "50", "--out", &out_arg(tmp.path())]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(line_count(&tmp.path().join("dataset.csv")), 51);
    let header = fs::read_to_string(tmp.path().join("dataset.csv")).unwrap();
    assert!(header.starts_with("x,y,T,gex_rt\n"));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["experiment"], "vle-data");
    assert_eq!(manifest["seeds"]["data"], 7);
    assert_eq!(manifest["config"]["n"], "50");
    assert_eq!(manifest["files"][0], "dataset.csv");
}

#[test]
fn lambda_flag_sets_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hk(&[
        "setting1",
        "--lambda",
        "1e-2,1e0",
        "--out",
        &out_arg(tmp.path()),
    ]);
    assert!(out.status.success());
    let sweep = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let lambdas: Vec<&str> = sweep
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(lambdas, ["0.01", "1"]);
}

#[test]
fn setting1_train_rmse_rises_with_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hk(&[
        "setting1",
        "--lambda",
        "1e-3,1e-2,1e-1,1e0,1e1,1e2",
        "--out",
        &out_arg(tmp.path()),
    ]);
    assert!(out.status.success());
    let sweep = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let train: Vec<f64> = sweep
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(train.len(), 6);
    assert!(train.windows(2).all(|w| w[1] >= w[0]), "{train:?}");
}

#[test]
fn setting3_writes_one_sweep_per_m() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hk(&[
        "setting3",
        "--m",
        "5,10",
        "--lambda",
        "1",
        "--out",
        &out_arg(tmp.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for m in [5, 10] {
        assert_eq!(line_count(&tmp.path().join(format!("sweep_m{m}.csv"))), 2);
    }
}

#[test]
fn config_file_then_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# small run\nn = 12\nlambda = 1e-1, 1\nseed = 3\n").unwrap();
    let out_dir = tmp.path().join("out");
    let out = hk(&[
        "setting1",
        "--config",
        &cfg.display().to_string(),
        "--seed",
        "4",
        "--out",
        &out_arg(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(line_count(&out_dir.join("train.csv")), 13);
    assert_eq!(line_count(&out_dir.join("sweep.csv")), 3);
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"data\": 4"));
}

#[test]
fn same_seed_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        assert!(hk(&["koopman", "--out", &out_arg(dir)]).status.success());
    }
    for name in ["sweep.csv", "models.json", "manifest.json"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let c = tmp.path().join("c");
    assert!(hk(&["koopman", "--seed", "8", "--out", &out_arg(&c)])
        .status
        .success());
    assert_ne!(
        fs::read(a.join("sweep.csv")).unwrap(),
        fs::read(c.join("sweep.csv")).unwrap()
    );
}

#[test]
fn unknown_key_is_a_config_error() {
    let out = hk(&["setting2", "--set", "gamma_z=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma_z"));
}

#[test]
fn malformed_set_is_a_config_error() {
    assert_eq!(
        hk(&["setting1", "--set", "no_equals"]).status.code(),
        Some(2)
    );
}

#[test]
fn dynamic_experiments_take_one_m() {
    assert_eq!(hk(&["koopman", "--m", "10,20"]).status.code(), Some(2));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_hybridkernel"))
        .args(["vle-data", "--n", "3"])
        .env("HYBRIDKERNEL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    // far below the vapor pressures in the window: no bubble point brackets
    let out = hk(&[
        "vle-data",
        "--set",
        "pressure=1",
        "--out",
        &out_arg(tmp.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
