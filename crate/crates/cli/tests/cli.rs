//! End-to-end checks of the `logmeta` binary.

use std::path::Path;
use std::process::{Command, Output};

use logmeta_core::ingest::load_canonical;
use logmeta_core::model::load_checkpoint;
use logmeta_core::represent::{fnv1a64, load_embedding_table, preprocess, EmbeddingProvider, HashingProvider};
use logmeta_core::synth::make_benchmark;
use serde_json::Value;

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_logmeta"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = run(args, cwd);
    let err = String::from_utf8(out.stderr).unwrap();
    (out.status.code().unwrap(), err)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &[&str] = &[
    "--set",
    "model.embedding_dim=64",
    "--set",
    "model.hidden_dim=4",
    "--set",
    "meta.meta_epochs=2",
    "--set",
    "meta.test_inner_steps=1",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(SMALL).copied().collect()
}

#[test]
fn ingest_writes_canonical_events() {
    let dir = tempfile::tempdir().unwrap();
    let raw = "- 1117838570 2005.06.03 R02-M1-N0-C:J12-U11 2005-06-03-15.42.50.675872 R02-M1-N0-C:J12-U11 RAS KERNEL INFO instruction cache parity error corrected\n\
               not a log line\n\
               KERNDTLB 1117838560 2005.06.03 R02-M1-N0-C:J12-U11 2005-06-03-15.42.40.000000 R02-M1-N0-C:J12-U11 RAS KERNEL FATAL data TLB error interrupt\n";
    std::fs::write(dir.path().join("raw.log"), raw).unwrap();
    let out = ok(&["ingest", "--input", "raw.log", "--out", "bgl.jsonl"], dir.path());
    assert!(out.contains("1 lines skipped"), "{out}");
    let split = load_canonical(&dir.path().join("bgl.jsonl")).unwrap();
    assert_eq!(split.len(), 2);
    // Sorted by timestamp, so the alert line comes first.
    assert!(split.events[0].is_anomaly);
    assert_eq!(split.events[1].text, "KERNEL INFO instruction cache parity error corrected");
}

#[test]
fn synth_profile_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let profile = make_benchmark(7)[0].profile.to_toml();
    std::fs::write(dir.path().join("p.toml"), profile).unwrap();
    for out in ["a", "b"] {
        ok(&["synth", "p.toml", "--events", "5000", "--out", out], dir.path());
    }
    ok(&["synth", "p.toml", "--events", "5000", "--seed", "99", "--out", "c"], dir.path());
    let read = |d: &str| std::fs::read(dir.path().join(d).join("syn-bgl.jsonl")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    assert_eq!(load_canonical(&dir.path().join("a/syn-bgl.jsonl")).unwrap().len(), 5000);
}

#[test]
fn embed_table_matches_hashing_provider() {
    let dir = tempfile::tempdir().unwrap();
    let profile = make_benchmark(7)[1].profile.to_toml();
    std::fs::write(dir.path().join("p.toml"), profile).unwrap();
    ok(&["synth", "p.toml", "--events", "3000", "--out", "."], dir.path());
    let out = ok(
        &["embed", "--corpus", "syn-liberty.jsonl", "--out", "cache/t.cslg", "--set", "model.embedding_dim=32"],
        dir.path(),
    );
    assert!(out.contains("3000 events"), "{out}");
    let table = load_embedding_table(&dir.path().join("cache/t.cslg"), 32).unwrap();
    let split = load_canonical(&dir.path().join("syn-liberty.jsonl")).unwrap();
    let hashing = HashingProvider::new(32, 0);
    let mut keys = std::collections::HashSet::new();
    for e in split.events.iter().take(200) {
        let text = preprocess(&e.text);
        keys.insert(fnv1a64(text.as_bytes()));
        assert_eq!(table.embed(&text).unwrap(), hashing.embed(&text).unwrap());
    }
    assert!(table.len() >= keys.len() && table.len() < split.len());
}

#[test]
fn train_then_adapt_eval_on_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "benchmark", "--out", "bench"], d);
    let before = std::fs::read(d.join("bench/syn-bgl.jsonl")).unwrap();

    ok(&with_small(&["train", "--config", "bench/run.toml", "--out", "model", "--no-timings"]), d);
    let theta = load_checkpoint(&d.join("model/checkpoint.cslm")).unwrap();
    assert_eq!((theta.shape().embedding_dim, theta.shape().hidden_dim), (64, 4));
    let telemetry = std::fs::read_to_string(d.join("model/telemetry.jsonl")).unwrap();
    assert_eq!(telemetry.lines().count(), 2);
    let manifest = json(&d.join("model/manifest.json"));
    assert_eq!(manifest["tasks"].as_array().unwrap().len(), 2);

    let out = ok(
        &with_small(&[
            "adapt-eval",
            "--config",
            "bench/run.toml",
            "--checkpoint",
            "model/checkpoint.cslm",
            "--out",
            "eval",
        ]),
        d,
    );
    assert!(out.contains("syn-tbird: 20 tasks"), "{out}");
    for system in ["syn-tbird", "syn-spirit"] {
        let base = d.join("eval").join(system);
        let summary = json(&base.join("summary.json"));
        assert_eq!(summary["tasks"], 20);
        assert_eq!(summary["system_id"], system);
        assert!(summary["timing"]["train_total_s"].as_f64().unwrap() > 0.0);
        let reports = std::fs::read_dir(base.join("reports")).unwrap().count();
        assert_eq!(reports, 20);
        let pooled = &summary["micro"]["confusion"];
        let total: u64 = ["tp", "fp", "fn", "tn"].iter().map(|k| pooled[k].as_u64().unwrap()).sum();
        assert_eq!(total, 20 * 10_000);
        assert_eq!(json(&base.join("manifest.json"))["tasks"].as_array().unwrap().len(), 20);
    }
    assert_eq!(std::fs::read(d.join("bench/syn-bgl.jsonl")).unwrap(), before);

    // --tasks overrides the configured count.
    ok(
        &with_small(&[
            "adapt-eval",
            "--checkpoint",
            "model/checkpoint.cslm",
            "--target",
            "bench/syn-spirit.jsonl",
            "--profile",
            "spirit",
            "--tasks",
            "3",
            "--out",
            "eval3",
        ]),
        d,
    );
    assert_eq!(json(&d.join("eval3/syn-spirit/summary.json"))["tasks"], 3);
    assert!(!d.join("eval3/syn-tbird").exists());

    // A checkpoint of another shape is rejected as a config error.
    let (c, err) = code(
        &["adapt-eval", "--config", "bench/run.toml", "--checkpoint", "model/checkpoint.cslm", "--out", "x"],
        d,
    );
    assert_eq!(c, 2, "{err}");
    assert_eq!(err.trim().lines().count(), 1, "{err}");
}

#[test]
fn flags_override_file_and_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let profile = make_benchmark(7)[0].profile.to_toml();
    std::fs::write(d.join("p.toml"), profile).unwrap();
    ok(&["synth", "p.toml", "--events", "30000", "--out", "."], d);
    std::fs::write(
        d.join("run.toml"),
        "meta.meta_epochs = 3\nmodel.embedding_dim = 16\nmodel.hidden_dim = 2\n[data]\nsources = [\"syn-bgl.jsonl\"]\n",
    )
    .unwrap();
    ok(&["train", "--config", "run.toml", "--out", "a"], d);
    assert_eq!(std::fs::read_to_string(d.join("a/telemetry.jsonl")).unwrap().lines().count(), 3);
    ok(&["train", "--config", "run.toml", "--set", "meta.meta_epochs=1", "--out", "b"], d);
    assert_eq!(std::fs::read_to_string(d.join("b/telemetry.jsonl")).unwrap().lines().count(), 1);
    let saved = std::fs::read_to_string(d.join("b/run.toml")).unwrap();
    assert!(saved.contains("meta_epochs = 1") && saved.contains("hidden_dim = 2"), "{saved}");
}

#[test]
fn exit_codes_and_single_line_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases: Vec<(Vec<&str>, i32)> = vec![
        (vec!["train", "--config", "missing.toml"], 2),
        (vec!["train", "--source", "missing.jsonl"], 2),
        (vec!["train", "--set", "meta.alpha=-1", "--source", "x.jsonl"], 2),
        (vec!["train", "--set", "meta.nope=1", "--source", "x.jsonl"], 2),
        (vec!["train", "--set", "noequals"], 2),
        (vec!["train", "--provider", "bogus", "--source", "x.jsonl"], 2),
        (vec!["ablate", "--variant", "half-meta"], 2),
        (vec!["train", "--source", "bad.jsonl"], 3),
        (vec!["train", "--source", "tiny.jsonl", "--out", "t"], 4),
    ];
    std::fs::write(d.join("x.jsonl"), "").unwrap();
    std::fs::write(d.join("bad.jsonl"), "{\"seq\":0}\n").unwrap();
    let line = r#"{"seq":0,"ts":0,"label":"-","component":"A","level":"INFO","message":"ok"}"#;
    std::fs::write(d.join("tiny.jsonl"), format!("{line}\n").repeat(50)).unwrap();
    for (args, want) in cases {
        let (c, err) = code(&args, d);
        assert_eq!(c, want, "{args:?}: {err}");
        assert_eq!(err.trim().lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error: "), "{args:?}: {err}");
    }
}
