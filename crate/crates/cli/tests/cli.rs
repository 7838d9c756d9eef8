use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use flare_cli::run_args;
use flare_core::ingest::{read_trace, trace_to_string, ClientTrace, Direction, PacketRecord, StationId};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_flare");

/// 24 traces of 900 s, shared by the read-only tests.
fn corpus() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let out = dir.path().to_str().unwrap();
        run_args(["flare", "simulate", "--out", out, "--traces-per-template", "1", "--duration-s", "900"]).unwrap();
        dir
    })
    .path()
}

fn flare(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn error_record(out: &std::process::Output) -> serde_json::Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not a JSON record: {stderr}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p).into_iter().map(|(k, v)| (Path::new(p.file_name().unwrap()).join(k), v)));
        } else {
            out.insert(PathBuf::from(p.file_name().unwrap()), fs::read(&p).unwrap());
        }
    }
    out
}

#[test]
fn simulate_writes_traces_and_manifest() {
    let files = files(corpus());
    assert_eq!(files.keys().filter(|k| k.starts_with("traces")).count(), 24);
    let manifest: serde_json::Value = serde_json::from_slice(&files[Path::new("manifest.json")]).unwrap();
    assert_eq!(manifest["corpus"]["entries"].as_array().unwrap().len(), 24);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_is_independent_of_output_location() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        run_args(["flare", "simulate", "--out", s(d.path()), "--traces-per-template", "1", "--duration-s", "120"])
            .unwrap();
    }
    assert_eq!(files(a.path()), files(b.path()));
}

#[test]
fn reports_are_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        for cmd in ["segment", "featurize", "train"] {
            run_args(["flare", cmd, "--corpus", s(corpus()), "--out", s(d.path()), "--trees", "10"]).unwrap();
        }
    }
    let fa = files(a.path());
    assert_eq!(fa.len(), 4);
    assert_eq!(fa, files(b.path()));
    let windows = String::from_utf8(fa[Path::new("windows.csv")].clone()).unwrap();
    assert!(windows.starts_with("# config: {"));
    // 24 traces x 3 windows of 300 s
    assert_eq!(windows.lines().count(), 2 + 72);
}

#[test]
fn featurize_has_both_views() {
    let out = TempDir::new().unwrap();
    run_args(["flare", "featurize", "--corpus", s(corpus()), "--out", s(out.path())]).unwrap();
    let text = fs::read_to_string(out.path().join("features.csv")).unwrap();
    let header = text.lines().nth(1).unwrap();
    assert_eq!(header.split(',').count(), 4 + 39 + 29);
    assert_eq!(header.split(',').filter(|h| h.starts_with("flow_")).count(), 39);
}

#[test]
fn train_then_predict() {
    let out = TempDir::new().unwrap();
    let pipeline = out.path().join("model").join("p.json");
    run_args([
        "flare", "train", "--corpus", s(corpus()), "--out", s(out.path()), "--pipeline", s(&pipeline), "--trees", "20",
    ])
    .unwrap();
    assert!(pipeline.is_file());
    let trace = corpus().join("traces").join("lstm_laptop_0.csv");
    run_args(["flare", "predict", "--pipeline", s(&pipeline), "--input", s(&trace), "--out", s(out.path())]).unwrap();
    let text = fs::read_to_string(out.path().join("predictions.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    for r in &records {
        assert_eq!(r["trace_id"], "lstm_laptop_0");
        assert_eq!(r["classes"].as_array().unwrap().len(), 2);
    }
    assert!(records.iter().filter(|r| r["verdict"] == "rnn").count() >= 2);
}

#[test]
fn predict_on_idle_trace_fails() {
    let out = TempDir::new().unwrap();
    let pipeline = out.path().join("pipeline.json");
    run_args(["flare", "train", "--corpus", s(corpus()), "--out", s(out.path()), "--trees", "5"]).unwrap();
    let client = StationId([2, 0, 0, 0, 0, 1]);
    let idle = ClientTrace {
        client_id: client,
        ap_id: StationId([2, 0, 0, 0, 0, 2]),
        packets: (0..400)
            .map(|i| PacketRecord {
                timestamp_us: i * 1_000_000,
                size_bytes: 60,
                direction: if i % 2 == 0 { Direction::Uplink } else { Direction::Downlink },
                station_id: client,
            })
            .collect(),
        label: None,
        meta: BTreeMap::from([("trace_id".to_string(), "idle".to_string())]),
    };
    let idle_path = out.path().join("idle.csv");
    fs::write(&idle_path, trace_to_string(&idle)).unwrap();
    let rec = error_record(&flare(&[
        "predict", "--pipeline", s(&pipeline), "--input", s(&idle_path), "--out", s(out.path()),
    ]));
    assert_eq!(rec["error"], "filtered_window");
    assert_eq!(rec["command"], "predict");
}

#[test]
fn ingest_extracts_one_client() {
    let dir = TempDir::new().unwrap();
    let capture = dir.path().join("cap.csv");
    let mut text = String::from("timestamp,size,src_mac,dst_mac\n");
    for i in 0..50 {
        let t = 10.0 + i as f64 * 0.5;
        text.push_str(&format!("{t},1500,aa:aa:aa:aa:aa:01,bb:bb:bb:bb:bb:00\n"));
        text.push_str(&format!("{},80,bb:bb:bb:bb:bb:00,aa:aa:aa:aa:aa:01\n", t + 0.1));
        text.push_str(&format!("{},900,cc:cc:cc:cc:cc:02,bb:bb:bb:bb:bb:00\n", t + 0.2));
    }
    fs::write(&capture, text).unwrap();
    run_args([
        "flare",
        "ingest",
        "--capture",
        s(&capture),
        "--ap",
        "bb:bb:bb:bb:bb:00",
        "--client",
        "aa:aa:aa:aa:aa:01",
        "--family",
        "cnn",
        "--model",
        "resnet18",
        "--name",
        "c1",
        "--out",
        s(dir.path()),
    ])
    .unwrap();
    let trace = read_trace(&fs::read_to_string(dir.path().join("c1.csv")).unwrap()).unwrap();
    assert_eq!(trace.packets.len(), 100);
    assert_eq!(trace.uplink_count(), 50);
    assert_eq!(trace.label.unwrap().model_name, "resnet18");
    assert_eq!(trace.packets[0].timestamp_us, 0);
}

#[test]
fn analyze_writes_kl_and_fisher() {
    let out = TempDir::new().unwrap();
    run_args(["flare", "analyze", "--corpus", s(corpus()), "--out", s(out.path())]).unwrap();
    for f in ["kl.csv", "fisher_cnn.csv", "fisher_rnn.csv"] {
        let text = fs::read_to_string(out.path().join(f)).unwrap();
        assert!(text.lines().count() > 2, "{f}");
    }
    let fisher = fs::read_to_string(out.path().join("fisher_cnn.csv")).unwrap();
    assert_eq!(fisher.lines().count(), 2 + 39 + 29);
}

#[test]
fn eval_commands_write_metrics() {
    let out = TempDir::new().unwrap();
    let common = ["--corpus", s(corpus()), "--out", s(out.path()), "--trees", "10", "--seeds", "1,2"];
    for cmd in [&["eval-closed"][..], &["eval-open", "--holdout", "resnet18,mlp"], &["sweep", "--lengths", "60,300"]] {
        let mut args = vec!["flare"];
        args.extend_from_slice(cmd);
        args.extend_from_slice(&common);
        run_args(args).unwrap();
    }
    let closed = fs::read_to_string(out.path().join("metrics_closed.csv")).unwrap();
    // 2 classes x 3 views x 3 metrics
    assert_eq!(closed.lines().count(), 2 + 18);
    let runs = fs::read_to_string(out.path().join("runs_closed.csv")).unwrap();
    assert_eq!(runs.lines().count(), 2 + 2 * 2 * 3);
    let sweep = fs::read_to_string(out.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 2 + 2 * 2 * 3);
    assert!(out.path().join("metrics_open.csv").is_file());
}

#[test]
fn attack_sim_rows() {
    let out = TempDir::new().unwrap();
    run_args([
        "flare",
        "attack-sim",
        "--models",
        "resnet18,lstm",
        "--sync-modes",
        "sync",
        "--seeds",
        "1,2",
        "--out",
        s(out.path()),
    ])
    .unwrap();
    let text = fs::read_to_string(out.path().join("attack.csv")).unwrap();
    // 2 models x 1 mode x 2 schedules x 2 seeds
    assert_eq!(text.lines().count(), 2 + 8);
    for line in text.lines().skip(2) {
        let delay: f64 = line.split(',').nth(10).unwrap().parse().unwrap();
        assert!(delay > 0.0, "{line}");
    }
}

#[test]
fn config_file_and_overrides() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        "[attack]\nmodels = [\"lstm\"]\nsync_modes = [\"async\"]\nseeds = [3]\nschedules = [\"always\"]\n",
    )
    .unwrap();
    run_args(["flare", "attack-sim", "--config", s(&cfg), "--out", s(dir.path())]).unwrap();
    let text = fs::read_to_string(dir.path().join("attack.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("lstm,rnn,async,always,3,"));
}

#[test]
fn error_records() {
    let dir = TempDir::new().unwrap();
    let cases: Vec<(Vec<&str>, &str)> = vec![
        (vec!["segment", "--corpus", s(corpus())], "usage"),
        (vec!["segment", "--corpus", "/nonexistent/corpus", "--out", s(dir.path())], "config"),
        (vec!["attack-sim", "--models", "vgg99", "--out", s(dir.path())], "unknown_model_name"),
        (vec!["eval-open", "--holdout", "vgg99", "--corpus", s(corpus()), "--out", s(dir.path())], "unknown_model_name"),
        (vec!["segment", "--window-s", "60", "--stride-s", "120", "--corpus", s(corpus()), "--out", s(dir.path())], "config"),
        (vec!["sweep", "--lengths", "30", "--corpus", s(corpus()), "--out", s(dir.path())], "invalid_window"),
        (vec!["predict", "--input", "x.csv", "--out", s(dir.path())], "usage"),
    ];
    for (args, kind) in cases {
        let rec = error_record(&flare(&args));
        assert_eq!(rec["error"], kind, "{args:?}: {rec}");
        assert_eq!(rec["command"], args[0]);
    }

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[pipeline]\nno_such_key = 1\n").unwrap();
    let rec = error_record(&flare(&["segment", "--config", s(&bad), "--corpus", s(corpus()), "--out", s(dir.path())]));
    assert_eq!(rec["error"], "config");

    let cap = dir.path().join("cap.csv");
    fs::write(&cap, "t,size\n1,2\n").unwrap();
    let rec = error_record(&flare(&[
        "ingest", "--capture", s(&cap), "--ap", "bb:bb:bb:bb:bb:00", "--client", "aa:aa:aa:aa:aa:01", "--out",
        s(dir.path()),
    ]));
    assert_eq!(rec["error"], "missing_header");
}

#[test]
fn clap_rejects_unknown_subcommand() {
    let out = flare(&["teleport"]);
    assert_eq!(out.status.code(), Some(2));
}
