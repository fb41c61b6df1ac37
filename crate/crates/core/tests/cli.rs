use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_caadp");

fn caadp(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("CAADP_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn base_config(out: &Path, name: &str, mechanism: &str, alpha: f64) -> Value {
    json!({
        "name": name,
        "dataset": "synthetic",
        "synthetic": {"n": 400, "fall_fraction": 0.25, "channels": 2, "seed": 1},
        "preprocess": {"window_len": 16, "step": 8, "label_rule": "file_prefix_f"},
        "model": {"kind": "mlp", "window_len": 16, "channels": 2, "mlp_hidden": [4]},
        "dp": {"mechanism": mechanism, "sigma_base": 0.5, "alpha": alpha, "batch_size": 16},
        "epochs": 4,
        "seeds": [0, 1],
        "output_dir": out,
    })
}

fn write_config(dir: &Path, file: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(file);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn preprocess(cfg: &Path) {
    let out = caadp(&["preprocess", "--config", s(cfg), "--quiet"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn preprocess_reports_class_balance_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config(&tmp.path().join("out"), "m", "ca_adp", 0.6);
    cfg["synthetic"]["n"] = json!(1000);
    let path = write_config(tmp.path(), "c.json", &cfg);
    let out = caadp(&["preprocess", "--config", s(&path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["total"]["positives"], 250);
    assert_eq!(summary["total"]["negatives"], 750);
    assert_eq!(summary["window_len"], 16);

    let cache = fs::read_dir(tmp.path().join("out/cache"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let first = fs::read(cache.join("train.bin")).unwrap();
    preprocess(&path);
    assert_eq!(first, fs::read(cache.join("train.bin")).unwrap());
}

#[test]
fn train_is_byte_identical_across_invocations() {
    let tmp = TempDir::new().unwrap();
    let cfg = base_config(&tmp.path().join("out"), "ca", "ca_adp", 0.6);
    let path = write_config(tmp.path(), "c.json", &cfg);
    preprocess(&path);
    let mut results = Vec::new();
    for _ in 0..2 {
        let out = caadp(&["train", "--config", s(&path), "--quiet"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        results.push(fs::read(tmp.path().join("out/results_ca.csv")).unwrap());
    }
    assert_eq!(results[0], results[1]);
    let text = String::from_utf8(results[0].clone()).unwrap();
    let header = text.lines().next().unwrap();
    for col in [
        "dataset",
        "mechanism",
        "sigma_base",
        "alpha",
        "clip_c",
        "delta",
        "seed",
        "eps_rdp_pre",
        "eps_rdp_post",
        "epochs_actual",
    ] {
        assert!(header.split(',').any(|h| h == col), "missing {col}");
    }
    assert_eq!(text.lines().count(), 3);
    for f in ["metrics.json", "ledger.json", "trace.csv", "checkpoint.bin"] {
        assert!(tmp.path().join("out/runs/ca-seed1").join(f).exists(), "{f}");
    }
}

#[test]
fn seed_override_trains_one_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = base_config(&tmp.path().join("out"), "m", "conv_dp", 0.0);
    let path = write_config(tmp.path(), "c.json", &cfg);
    preprocess(&path);
    let out = caadp(&["train", "--config", s(&path), "--seed", "7", "--quiet"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(tmp.path().join("out/results_m.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(tmp.path().join("out/runs/m-seed7").exists());
}

#[test]
fn no_dp_ledger_reports_infinite_epsilon() {
    let tmp = TempDir::new().unwrap();
    let cfg = base_config(&tmp.path().join("out"), "plain", "no_dp", 0.0);
    let path = write_config(tmp.path(), "c.json", &cfg);
    preprocess(&path);
    assert_eq!(code(&caadp(&["train", "--config", s(&path), "--quiet"])), 0);
    let ledger: Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("out/runs/plain-seed0/ledger.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(ledger["eps_rdp_post"], "inf");
    assert_eq!(ledger["eps_analytic_pre"], "inf");
}

#[test]
fn zero_alpha_matches_fixed_noise_rows() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("out");
    let conv = write_config(
        tmp.path(),
        "a.json",
        &base_config(&out_dir, "a", "conv_dp", 0.0),
    );
    let ca = write_config(
        tmp.path(),
        "b.json",
        &base_config(&out_dir, "b", "ca_adp", 0.0),
    );
    preprocess(&conv);
    for p in [&conv, &ca] {
        assert_eq!(code(&caadp(&["train", "--config", s(p), "--quiet"])), 0);
    }
    let strip = |name: &str| -> Vec<Vec<String>> {
        let mut r = csv::Reader::from_path(out_dir.join(name)).unwrap();
        r.records()
            .map(|rec| rec.unwrap().iter().skip(3).map(str::to_string).collect())
            .collect()
    };
    assert_eq!(strip("results_a.csv"), strip("results_b.csv"));
}

#[test]
fn error_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("out");

    // malformed config
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&caadp(&["preprocess", "--config", s(&bad)])), 1);
    let mut cfg = base_config(&out_dir, "m", "ca_adp", 0.6);
    cfg["seeds"] = json!([]);
    let empty_seeds = write_config(tmp.path(), "seeds.json", &cfg);
    assert_eq!(code(&caadp(&["train", "--config", s(&empty_seeds)])), 1);

    // missing config file, cache and dataset root
    assert_eq!(
        code(&caadp(&[
            "train",
            "--config",
            s(&tmp.path().join("nope.json"))
        ])),
        2
    );
    let cfg = base_config(&out_dir, "m", "ca_adp", 0.6);
    let path = write_config(tmp.path(), "c.json", &cfg);
    let out = caadp(&["train", "--config", s(&path)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("preprocess"));
    let mut real = cfg.clone();
    real["dataset"] = json!("sisfall");
    real["data_root"] = json!(tmp.path().join("no-such-dir"));
    let real = write_config(tmp.path(), "real.json", &real);
    assert_eq!(code(&caadp(&["preprocess", "--config", s(&real)])), 2);
    let mut unset = cfg.clone();
    unset["dataset"] = json!("mobiact");
    let unset = write_config(tmp.path(), "unset.json", &unset);
    assert_eq!(code(&caadp(&["preprocess", "--config", s(&unset)])), 2);

    // cache built for a different model shape
    preprocess(&path);
    let mut wrong = cfg.clone();
    wrong["model"]["window_len"] = json!(12);
    let wrong = write_config(tmp.path(), "wrong.json", &wrong);
    assert_eq!(code(&caadp(&["train", "--config", s(&wrong)])), 3);
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn compare_renders_both_tables() {
    let tmp = TempDir::new().unwrap();
    let out = caadp(&[
        "compare",
        s(&fixture("table5_conv_dp.csv")),
        s(&fixture("table5_ca_adp.csv")),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("0.05/3 = 0.0167"));
    assert!(text.contains("+0.0883"));
    let csv = fs::read_to_string(tmp.path().join("compare_tests.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(tmp.path().join("compare_diffs.txt").exists());
}

#[test]
fn compare_errors() {
    let tmp = TempDir::new().unwrap();
    let a = fixture("table5_conv_dp.csv");
    let out = caadp(&["compare", s(&a), s(&a)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("no nonzero differences"));

    let text = fs::read_to_string(&a)
        .unwrap()
        .replace(",recall,", ",sensitivity,");
    let renamed = tmp.path().join("renamed.csv");
    fs::write(&renamed, text).unwrap();
    assert_eq!(code(&caadp(&["compare", s(&a), s(&renamed)])), 4);
    assert_eq!(
        code(&caadp(&["compare", s(&a), s(&tmp.path().join("none.csv"))])),
        2
    );
}

#[test]
fn report_merges_runs_and_flags_missing_ledgers() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("out");
    assert_eq!(code(&caadp(&["report", s(&out_dir)])), 2);

    let conv = write_config(
        tmp.path(),
        "a.json",
        &base_config(&out_dir, "conv", "conv_dp", 0.0),
    );
    let ca = write_config(
        tmp.path(),
        "b.json",
        &base_config(&out_dir, "ca", "ca_adp", 0.6),
    );
    preprocess(&conv);
    for p in [&conv, &ca] {
        assert_eq!(code(&caadp(&["train", "--config", s(p), "--quiet"])), 0);
    }
    let out = caadp(&["report", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = table
        .lines()
        .filter(|l| l.starts_with("synthetic"))
        .collect();
    assert_eq!(rows.len(), 2, "{table}");
    assert!(rows
        .iter()
        .all(|r| r.contains("per_tensor_batch, sigma_times_c")));
    let merged: Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(merged.as_array().unwrap().len(), 4);

    fs::remove_file(out_dir.join("runs/ca-seed1/ledger.json")).unwrap();
    let out = caadp(&["report", s(&out_dir), "--quiet"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unaccounted"));
    let csv = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(csv.matches(",unaccounted,").count(), 1);
}

#[test]
fn sweep_curve_and_grid() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &base_config(&out_dir, "sw", "ca_adp", 0.6),
    );
    preprocess(&cfg);

    let out = caadp(&["sweep", "--config", s(&cfg), "--curve-only", "--quiet"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut r = csv::Reader::from_path(out_dir.join("sweep_curve_sw.csv")).unwrap();
    let eps: Vec<f64> = r
        .records()
        .map(|rec| rec.unwrap()[4].parse().unwrap())
        .collect();
    assert_eq!(eps.len(), 7);
    assert!(eps.windows(2).all(|w| w[1] < w[0]), "{eps:?}");
    assert!(!out_dir.join("sweep_sw.csv").exists());

    let grid = write_config(
        tmp.path(),
        "grid.json",
        &json!({"sigma_grid": [0.2, 0.5, 1.0], "reference_epochs": 2}),
    );
    let out = caadp(&["sweep", "--config", s(&cfg), "--sweep", s(&grid), "--quiet"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(out_dir.join("sweep_sw.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "sigma,eps_analytic,eps_rdp,f1_seed0,f1_seed1,mean_f1"
    );
    assert_eq!(lines.len(), 4);

    let desc = write_config(tmp.path(), "desc.json", &json!({"sigma_grid": [0.5, 0.2]}));
    assert_eq!(
        code(&caadp(&["sweep", "--config", s(&cfg), "--sweep", s(&desc)])),
        1
    );
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in walkdir::WalkDir::new(&root) {
        let p = entry.unwrap().into_path();
        if p.extension().is_some_and(|e| e == "json") && p.file_name().unwrap() != "sweep.json" {
            caadp::experiment::ExperimentConfig::load(&p)
                .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert_eq!(n, 13);
    caadp::experiment::SweepConfig::load(&root.join("sweep.json")).unwrap();
}
