use std::path::Path;
use std::process::{Command, Output};

fn dtq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtq"))
        .args(args)
        .env("DTQ_LOG_LEVEL", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dtq(args);
    assert!(
        out.status.success(),
        "dtq {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    assert_eq!(dtq(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(dtq(&["evaluate", "--panel", "x.csv"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let out = dtq(&[
        "evaluate",
        "--ckpt",
        s(&dir.path().join("missing")),
        "--panel",
        "x.csv",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:") && err.contains("missing"), "{err}");

    let raw = dir.path().join("raw.csv");
    std::fs::write(
        &raw,
        "date,ticker,open,high,low,close,volume\n2021-01-04,A,1,1,1,oops,1\n",
    )
    .unwrap();
    let out = dtq(&["ingest", "--input", s(&raw), "--out-dir", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));

    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{"schema_version": 1, "context_lenn": 4}"#).unwrap();
    let out = dtq(&[
        "train-dt",
        "--data",
        s(&raw),
        "--config",
        s(&bad_cfg),
        "--out",
        s(&dir.path().join("c")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("context_lenn"));
}

#[test]
fn pipeline_writes_outputs_and_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let raw = d.join("raw.csv");
    ok(&[
        "synth-data",
        "--kind",
        "mean_reverting",
        "--tickers",
        "2",
        "--days",
        "120",
        "--seed",
        "1",
        "--out",
        s(&raw),
    ]);
    assert!(d.join("raw.csv.manifest.json").exists());

    let data = d.join("data");
    let dates: Vec<String> = std::fs::read_to_string(&raw)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    let train_end = &dates[dates.len() * 3 / 4];
    let test_end = dates.last().unwrap();
    ok(&[
        "ingest",
        "--input",
        s(&raw),
        "--out-dir",
        s(&data),
        "--train-end",
        train_end,
        "--test-end",
        test_end,
    ]);
    for f in ["features.csv", "train.csv", "test.csv", "manifest.json"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let trajs = d.join("trajs.jsonl");
    ok(&[
        "gen-expert",
        "--panel",
        s(&data.join("train.csv")),
        "--expert",
        "momentum,buy_and_hold",
        "--out",
        s(&trajs),
    ]);
    assert_eq!(std::fs::read_to_string(&trajs).unwrap().lines().count(), 2);

    let cfg = d.join("toy.json");
    std::fs::write(
        &cfg,
        r#"{"schema_version": 1, "backbone": {"n_layer": 1, "n_head": 2, "d_model": 16, "max_seq_len": 12},
            "context_len": 4, "max_ep_len": 256, "lora": {"rank": 2}, "train": {"iterations": 5, "batch_size": 4}}"#,
    )
    .unwrap();
    let ckpt = d.join("dt");
    ok(&["train-dt", "--data", s(&trajs), "--config", s(&cfg), "--out", s(&ckpt)]);
    for f in ["model.bin", "model.json", "loss.csv", "manifest.json"] {
        assert!(ckpt.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ckpt.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train-dt");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let eval = d.join("eval");
    let table = ok(&[
        "evaluate",
        "--ckpt",
        s(&ckpt.join("model.bin")),
        "--panel",
        s(&data.join("test.csv")),
        "--seeds",
        "1,2",
        "--out",
        s(&eval),
    ]);
    assert!(table.contains('±'), "{table}");
    assert!(eval.join("equity_1.csv").exists() && eval.join("equity_2.csv").exists());
    let before = std::fs::read(eval.join("report.json")).unwrap();
    ok(&["report", "--dir", s(&eval)]);
    assert_eq!(std::fs::read(eval.join("report.json")).unwrap(), before);

    let bc = d.join("bc");
    ok(&[
        "train-bc",
        "--data",
        s(&trajs),
        "--match-ckpt",
        s(&ckpt),
        "--iterations",
        "5",
        "--out",
        s(&bc),
    ]);
    let dt_meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ckpt.join("model.json")).unwrap()).unwrap();
    let bc_meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bc.join("model.json")).unwrap()).unwrap();
    let total = |m: &serde_json::Value| -> f64 {
        m["trainable"]["by_group"]
            .as_object()
            .unwrap()
            .values()
            .map(|v| v.as_f64().unwrap())
            .sum()
    };
    assert!((total(&bc_meta) - total(&dt_meta)).abs() / total(&dt_meta) <= 0.10);
}

#[test]
fn compare_init_requires_a_pretrained_container() {
    let dir = tempfile::tempdir().unwrap();
    let out = dtq(&["compare-init", "--panel", "x.csv", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--pretrained"));
}
