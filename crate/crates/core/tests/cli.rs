//! End-to-end runs of the `assoc-lstm` binary on the bundled fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn run(work: &Path, args: &[&str]) -> Output {
    let fx = fixtures();
    Command::new(env!("CARGO_BIN_EXE_assoc-lstm"))
        .args(args)
        .arg("--config")
        .arg(fx.join("smoke.toml"))
        .arg("--data-dir")
        .arg(&fx)
        .arg("--dataset")
        .arg(work.join("ds.bin"))
        .arg("--checkpoint-dir")
        .arg(work.join("run"))
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn prepare_train_evaluate_predict_export() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path();

    let stdout = ok(&run(work, &["prepare"]));
    assert!(stdout.contains("2 tickers"), "{stdout}");
    let first = std::fs::read(work.join("ds.bin")).unwrap();
    ok(&run(work, &["prepare"]));
    assert_eq!(std::fs::read(work.join("ds.bin")).unwrap(), first);

    let stdout = ok(&run(work, &["train"]));
    assert!(stdout.contains("trained 2 epochs"), "{stdout}");
    let history = std::fs::read_to_string(work.join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let stdout = ok(&run(work, &["evaluate", "--partition", "all"]));
    assert!(stdout.contains("FTSE") && stdout.contains("N225"), "{stdout}");
    let report = std::fs::read_to_string(work.join("run/report.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 3);
    ok(&run(work, &["evaluate", "--partition", "all"]));
    assert_eq!(std::fs::read_to_string(work.join("run/report.json")).unwrap(), report);

    let checkpoint = work.join("run/epoch_0001.ckpt");
    let out = run(work, &["evaluate", "--checkpoint", checkpoint.to_str().unwrap(), "--report", work.join("e1.json").to_str().unwrap()]);
    assert!(ok(&out).contains("checkpoint epoch 1"));

    let csv = fixtures().join("FTSE.csv");
    let stdout = ok(&run(work, &["predict", "--ticker", "FTSE", "--csv", csv.to_str().unwrap()]));
    let p: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    let last_close: f64 = std::fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(4)
        .unwrap()
        .parse()
        .unwrap();
    for k in ["open", "low", "high"] {
        let v = p[k].as_f64().unwrap();
        assert!(v.is_finite() && v > 0.5 * last_close && v < 2.0 * last_close, "{k} = {v}");
    }

    let plot = work.join("plot.csv");
    let stdout = ok(&run(work, &["export-plot", "--ticker", "N225", "--out", plot.to_str().unwrap()]));
    assert!(stdout.starts_with("wrote "));
    assert!(std::fs::read_to_string(&plot).unwrap().starts_with("date,actual_open,pred_open"));

    assert!(started.elapsed().as_secs() < 300);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path();
    let code = |out: Output| out.status.code().unwrap();

    assert_eq!(code(run(work, &["prepare", "--test-start", "2019-01-02"])), 1);
    let out = run(work, &["prepare", "--test-start", "2019-01-02"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("split"));
    assert_eq!(code(run(work, &["train", "--no-such-flag"])), 1);
    assert_eq!(code(run(work, &["evaluate", "--partition", "holdout"])), 1);
    assert_eq!(code(run(work, &["prepare", "--tickers", "FTSE,DJI"])), 2);
    assert_eq!(code(run(work, &["train"])), 2);

    let cfg = work.join("bad.toml");
    std::fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_assoc-lstm")).args(["prepare", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(out), 1);
}

#[test]
fn offline_fetch_reports_missing_tickers() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    std::fs::copy(fixtures().join("FTSE.csv"), data.join("FTSE_2018-01-01_2019-08-30.csv")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_assoc-lstm"))
        .args(["fetch", "--offline", "--tickers", "FTSE,DJI", "--fetch-from", "2018-01-01", "--fetch-to", "2019-08-30"])
        .arg("--data-dir")
        .arg(&data)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FTSE: 420 bars (cached)"), "{stdout}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("DJI"));
}
