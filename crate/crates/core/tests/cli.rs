use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = "
[train]
lr = 0.005
epochs = 10

[nas]
budget = 8
warmup = 4

[stream]
segment = 1200

[scenario]
num_tasks = 2
appearances = 1
classes_per_task = 4
train_per_class = 40
test_per_class = 20
";

fn ear(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ear"))
        .args(args)
        .env_remove("EAR_CONFIG")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ear(args);
    assert!(
        out.status.success(),
        "ear {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn generate(dir: &Path, cfg: &Path, out: &str) -> PathBuf {
    let data = dir.join(out);
    ok(&["gen-synthetic", "--config", s(cfg), "--out-dir", s(&data)]);
    data
}

#[test]
fn gen_synthetic_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = generate(dir.path(), &cfg, "a");
    let b = generate(dir.path(), &cfg, "b");
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n == "stream.earf"));
    assert!(names.iter().any(|n| n == "train_t1.earf"));
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n:?} differs");
    }
    // a different seed changes the data
    let c = dir.path().join("c");
    ok(&["gen-synthetic", "--config", s(&cfg), "--seed", "99", "--out-dir", s(&c)]);
    assert_ne!(fs::read(a.join("stream.earf")).unwrap(), fs::read(c.join("stream.earf")).unwrap());
}

#[test]
fn train_then_eval_ood_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let data = generate(dir.path(), &cfg, "data");
    let out = dir.path().join("out");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data.join("train_t0.earf")),
        "--arch",
        "t0:d0,t6:d1w16",
        "--out-dir",
        s(&out),
    ]);
    let model = out.join("model.earm");
    ok(&[
        "eval-ood",
        "--config",
        s(&cfg),
        "--model",
        s(&model),
        "--id",
        s(&data.join("test_t0.earf")),
        "--ood",
        s(&data.join("test_t1.earf")),
        "--out-dir",
        s(&out),
    ]);
    let m = json(&out.join("metrics.json"));
    let report = json(&out.join("train_report.json"));
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["config_hash"], report["config_hash"]);
    for key in ["auroc", "id_accuracy", "id_macro_f1", "ood_macro_f1", "tnr_at_tpr95", "tnr_at_tpr90"] {
        let v = m[key].as_f64().unwrap_or_else(|| panic!("{key} missing"));
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# schema_version=1 config_hash="));
    assert_eq!(lines.next().unwrap(), "metric,value");
    assert!(lines.any(|l| l.starts_with("auroc,")));
}

#[test]
fn nas_writes_trace_and_choice() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let data = generate(dir.path(), &cfg, "data");
    let out = dir.path().join("nas");
    ok(&["nas", "--config", s(&cfg), "--data", s(&data.join("train_t1.earf")), "--out-dir", s(&out)]);
    let trace = fs::read_to_string(out.join("nas_trace.jsonl")).unwrap();
    // header plus one line per evaluation
    assert_eq!(trace.lines().count(), 1 + 8);
    let best = json(&out.join("nas_best.json"));
    assert!(best["candidate"].as_str().unwrap().starts_with('t'));
}

#[test]
fn stream_log_round_trips_through_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let data = generate(dir.path(), &cfg, "data");
    let out = dir.path().join("run");
    ok(&[
        "stream",
        "--config",
        s(&cfg),
        "--data-dir",
        s(&data),
        "--routing",
        "oracle",
        "--save-models",
        "--out-dir",
        s(&out),
    ]);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["routing"], "oracle");
    let models = summary["models"].as_u64().unwrap();
    assert!(models >= 1);
    assert!(out.join("model_0.earm").exists());
    let derived = dir.path().join("derived");
    ok(&["metrics", "--config", s(&cfg), "--log", s(&out.join("events.jsonl")), "--out-dir", s(&derived)]);
    let d = json(&derived.join("derived_summary.json"));
    assert_eq!(d["matches_log"], true);
    assert_eq!(
        fs::read_to_string(out.join("moving_accuracy.csv")).unwrap(),
        fs::read_to_string(derived.join("moving_accuracy.csv")).unwrap()
    );
}

#[test]
fn six_task_stream_triggers_for_every_task() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[train]\nlr = 0.005\n[stream]\nsegment = 1500\n[scenario]\nnum_tasks = 6\n",
    );
    let out = dir.path().join("run");
    ok(&["stream", "--config", s(&cfg), "--out-dir", s(&out)]);
    let log = fs::read_to_string(out.join("events.jsonl")).unwrap();
    let mut triggers = 0;
    let mut tasks = std::collections::BTreeSet::new();
    for line in log.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        if v["type"] == "step" {
            tasks.insert(v["true_task"].as_u64().unwrap());
            if v["marker"] == "trigger" {
                triggers += 1;
            }
        }
    }
    assert_eq!(tasks.len(), 6);
    assert!(triggers >= tasks.len(), "{triggers} triggers");
}

#[test]
fn config_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let explicit = generate(dir.path(), &cfg, "explicit");
    let via_env = dir.path().join("env");
    let out = Command::new(env!("CARGO_BIN_EXE_ear"))
        .args(["gen-synthetic", "--out-dir", s(&via_env)])
        .env("EAR_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        json(&explicit.join("scenario.json"))["config_hash"],
        json(&via_env.join("scenario.json"))["config_hash"]
    );
    assert_eq!(
        fs::read(explicit.join("stream.earf")).unwrap(),
        fs::read(via_env.join("stream.earf")).unwrap()
    );
}

#[test]
fn failures_use_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |out: Output| out.status.code().unwrap();

    let bad = write_config(dir.path(), "[train]\nlearning_rate = 0.1\n");
    assert_eq!(code(ear(&["gen-synthetic", "--config", s(&bad), "--out-dir", s(dir.path())])), 2);
    let out_of_range = dir.path().join("range.toml");
    fs::write(&out_of_range, "[stream]\ntrigger_fraction = 1.5\n").unwrap();
    assert_eq!(code(ear(&["gen-synthetic", "--config", s(&out_of_range), "--out-dir", s(dir.path())])), 2);
    assert_eq!(code(ear(&["train"])), 2);

    let missing = dir.path().join("nope.earf");
    assert_eq!(code(ear(&["train", "--data", s(&missing), "--out-dir", s(dir.path())])), 3);

    let junk = dir.path().join("junk.earf");
    fs::write(&junk, b"EARF\x01\x00garbage").unwrap();
    let out = ear(&["train", "--data", s(&junk), "--out-dir", s(dir.path())]);
    assert_eq!(code(out), 4);
}
