use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn teletail(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_teletail"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn read_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const CAUCHY: &str = r#"
seed = 5
[data.synth]
kind = "bivariate-t"
n = 3940
nu = 1.0
rho = 0.8
"#;

#[test]
fn synth_writes_requested_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CAUCHY);
    let out = teletail(&["synth"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_rows(&dir.path().join("out/synth.csv"));
    assert_eq!(rows.len(), 3941);
    assert!(rows.iter().all(|r| r.len() == 2));
    assert!(dir.path().join("out/manifest_synth.json").exists());
}

#[test]
fn fit_then_sample_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{CAUCHY}[model]\ntype = \"flow\"\nlayers = 2\nhidden = 8\n[train]\nepochs = 2\nlearning_rate = 1e-3\n[sample]\nn = 500\n"
    );
    let cfg = write_config(dir.path(), &body);
    let mut files = Vec::new();
    for run in 0..2 {
        for cmd in ["fit", "sample"] {
            let out = teletail(&[cmd, "--out", &format!("{}/run{run}", dir.path().display())], &cfg);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
        let base = dir.path().join(format!("run{run}"));
        files.push(
            ["checkpoint.json", "loss_trace.csv", "sample.csv"]
                .map(|f| std::fs::read(base.join(f)).unwrap()),
        );
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(read_rows(&dir.path().join("run0/sample.csv")).len(), 501);
    assert_eq!(read_rows(&dir.path().join("run0/loss_trace.csv"))[0], vec!["epoch", "mean_loss"]);
}

#[test]
fn oracle_crossval_passes_self_consistency_bound() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
seed = 2
[data.synth]
kind = "gaussian"
n = 2000
d = 3
rho = 0.5
[model]
type = "oracle"
[eval]
folds = 4
quantiles = [0.9, 0.95]
n_gen = 20000
"#;
    let cfg = write_config(dir.path(), body);
    let out = teletail(&["crossval", "--workers", "2"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for q in [0.9, 0.95] {
        let rows = read_rows(&dir.path().join(format!("out/crossval_q{q}.csv")));
        let lambda_se = (0.25f64 / (2000.0 * (1.0 - q))).sqrt();
        for r in rows.iter().filter(|r| r[0] == "lambda") {
            let v: f64 = r[4].parse().unwrap();
            assert!(v.abs() < 3.0 * lambda_se, "{r:?}");
        }
        for r in rows.iter().filter(|r| r[0] == "rho") {
            let v: f64 = r[4].parse().unwrap();
            assert!(v.abs() < 3.0 / 2000f64.sqrt(), "{r:?}");
        }
    }
}

#[test]
fn transform_metrics_and_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = String::from("a,b,c\n");
    for k in 0..300 {
        let x = (k as f64 * 0.37).sin();
        data += &format!("{},{},{}\n", x, x * x + 0.01 * k as f64, (k as f64).sqrt());
    }
    std::fs::write(dir.path().join("data.csv"), data).unwrap();
    std::fs::write(
        dir.path().join("boxes.csv"),
        "lon1,lat1,lon2,lat2\n0,0,1,1\n10,0,11,1\n20,5,21,6\n",
    )
    .unwrap();
    let body = r#"
seed = 1
[data]
path = "data.csv"
gridboxes = "boxes.csv"
[model]
type = "vine"
[eval]
quantiles = [0.9]
report_source = "metrics"
profile_bins = 2
[sample]
n = 1000
"#;
    let cfg = write_config(dir.path(), body);
    for cmd in ["transform", "fit", "sample", "metrics", "report"] {
        let out = teletail(&[cmd], &cfg);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let scores = read_rows(&dir.path().join("out/normal_scores.csv"));
    assert_eq!(scores.len(), 301);
    assert_eq!(scores[0], vec!["a", "b", "c"]);
    let metrics = read_rows(&dir.path().join("out/metrics_q0.9.csv"));
    assert_eq!(metrics.iter().filter(|r| r[0] == "rho").count(), 3);
    assert_eq!(metrics.iter().filter(|r| r[0] == "alpha").count(), 12);
    let profile = read_rows(&dir.path().join("out/profile_metrics_q0.9.csv"));
    assert_eq!(profile[0][0], "metric");
    assert!(profile.len() > 1);
    let manifest = std::fs::read_to_string(dir.path().join("out/manifest_report.json")).unwrap();
    assert!(manifest.contains("config_sha256"));
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CAUCHY);
    assert_eq!(teletail(&["explode"], &cfg).status.code(), Some(2));

    let bad = write_config(dir.path(), &format!("{CAUCHY}[train]\nepochz = 3\n"));
    let out = teletail(&["fit"], &bad);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));

    let missing = write_config(dir.path(), "seed = 1\n[data]\npath = \"nope.csv\"\n");
    assert_eq!(teletail(&["transform"], &missing).status.code(), Some(3));

    std::fs::create_dir_all(dir.path().join("out")).unwrap();
    std::fs::write(
        dir.path().join("out/checkpoint.json"),
        r#"{"format_version": 99, "site_ids": [], "train_seed": 0, "epochs": 0, "model": {}}"#,
    )
    .unwrap();
    let cfg = write_config(dir.path(), CAUCHY);
    let out = teletail(&["sample"], &cfg);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 99"));

    let oracle = write_config(dir.path(), &format!("{CAUCHY}[model]\ntype = \"oracle\"\n"));
    assert_eq!(teletail(&["fit"], &oracle).status.code(), Some(2));
}

#[test]
fn seed_override_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CAUCHY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(teletail(&["synth", "--out", a.to_str().unwrap()], &cfg).status.success());
    assert!(teletail(&["synth", "--out", b.to_str().unwrap(), "--seed", "6"], &cfg).status.success());
    assert_ne!(std::fs::read(a.join("synth.csv")).unwrap(), std::fs::read(b.join("synth.csv")).unwrap());
}
