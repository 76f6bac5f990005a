//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach the console.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use logmeta_core::eval::{aggregate, confusion, metrics, DetectionReport};
use logmeta_core::meta::{meta_train, supervised_train, MetaConfig, Task};
use logmeta_core::model::{LabeledSeq, LstmParams, ModelShape, OptimizerKind};
use logmeta_core::represent::{preprocess, wordpiece_tokenize, Vocabulary};
use logmeta_core::tasks::{SplitSampler, SplitSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

// Tolerances and budgets.
const GRAD_CONFIGS: u64 = 20;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_BUDGET_S: f64 = 30.0;
const META_MIN_F1: f64 = 0.90;
const META_MIN_GAIN: f64 = 0.15;
const META_BUDGET_S: f64 = 600.0;
const MULTI_SOURCE_SEEDS: [u64; 3] = [1, 2, 3];
const MULTI_SOURCE_MIN_GAIN: f64 = 0.05;
const DEGENERATE_EPOCHS: usize = 6;
const SAMPLER_SPLITS: usize = 1000;
const TOKENIZER_CASES: usize = 1000;
const GOLDEN_CASES: usize = 22;
const METRIC_VECTORS: usize = 1000;
const METRIC_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradient_oracle() -> Outcome {
    let t = Instant::now();
    let shape = ModelShape::new(12, 8);
    let worst = (0..GRAD_CONFIGS)
        .map(|c| oracle::gradient_check(0xACCE_0000 + c, shape, 6))
        .fold(0.0f64, f64::max);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= GRAD_REL_TOL && secs < GRAD_BUDGET_S,
        format!(
            "{GRAD_CONFIGS} configs (E=12, H=8, window<=6), worst relative error {worst:.2e} (tol {GRAD_REL_TOL:e}), {secs:.1}s (budget {GRAD_BUDGET_S}s)"
        ),
    )
}

fn random_labeled(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> LabeledSeq {
    oracle::random_seq(rng, n, dim, 0.5)
}

fn fomaml_degenerate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0_4A41);
    let shape = ModelShape::new(10, 6);
    let tasks: Vec<Task> = (0..3)
        .map(|i| Task {
            task_id: format!("t{i}"),
            system_id: format!("s{i}"),
            support: random_labeled(&mut rng, 30, shape.embedding_dim),
            query: random_labeled(&mut rng, 40, shape.embedding_dim),
        })
        .collect();
    let theta0 = LstmParams::init(shape, &mut rng);
    let queries: Vec<&LabeledSeq> = tasks.iter().map(|t| &t.query).collect();
    let mut mismatched = Vec::new();
    for epochs in 1..=DEGENERATE_EPOCHS {
        let cfg = MetaConfig {
            inner_steps: 0,
            outer_optimizer: OptimizerKind::Sgd,
            meta_epochs: epochs,
            k: 7,
            beta: 0.05,
            ..Default::default()
        };
        let a = meta_train(&theta0, &tasks, &cfg, |_| {}).unwrap();
        let b = supervised_train(&theta0, &queries, &cfg).unwrap();
        if !a.bit_eq(&b) || a.bit_eq(&theta0) {
            mismatched.push(epochs);
        }
    }
    outcome(
        mismatched.is_empty(),
        format!(
            "inner_steps=0, plain descent: parameters after each of epochs 1..={DEGENERATE_EPOCHS} bitwise equal to pooled query training; mismatched epochs {mismatched:?}"
        ),
    )
}

fn sampler_conformance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5A_3B1E);
    let (mut checked, mut violations, mut corpora) = (0usize, Vec::new(), 0usize);
    while checked < SAMPLER_SPLITS {
        corpora += 1;
        let n = rng.gen_range(200..3000);
        let rate = rng.gen_range(0.0..0.1);
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(rate)).collect();
        let len = rng.gen_range(5..n / 6);
        // Bounds around the corpus rate so most draws are feasible.
        let lo = (rate - rng.gen_range(0.0..0.05)).max(0.0);
        let spec = SplitSpec::new(len, lo, (lo + rng.gen_range(0.0..0.08)).min(1.0));
        let mut sampler = SplitSampler::new(&labels, ChaCha8Rng::seed_from_u64(rng.gen()), 500);
        let mut taken = vec![false; n];
        for _ in 0..4 {
            let Ok(r) = sampler.sample(&spec, None, 0) else { break };
            checked += 1;
            if let Err(e) = oracle::check_split(&labels, &spec, r, &mut taken) {
                violations.push(e);
            }
        }
    }
    outcome(
        violations.is_empty(),
        format!(
            "{checked} splits from {corpora} random corpora: exact length, inclusive fraction bounds, pairwise disjoint; {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    )
}

fn tokenizer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x70_4E);
    let mut mismatches = Vec::new();
    for _ in 0..TOKENIZER_CASES {
        let vocab = oracle::random_toy_vocab(&mut rng);
        let text = oracle::random_toy_text(&mut rng);
        let v = Vocabulary::new(vocab.iter().cloned().chain([oracle::UNK.to_string()]), oracle::UNK).unwrap();
        let got = wordpiece_tokenize(&text, &v);
        let want = oracle::reference_wordpiece(&text, &vocab);
        if got != want {
            mismatches.push(format!("{text:?} over {vocab:?}: {got:?} vs {want:?}"));
        }
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "{TOKENIZER_CASES} random strings over toy vocabularies vs exhaustive search; {} mismatches{}",
            mismatches.len(),
            mismatches.first().map(|m| format!(" (first: {m})")).unwrap_or_default()
        ),
    )
}

fn preprocessing_golden() -> Outcome {
    let text = include_str!("../../core/tests/data/preprocess_golden.jsonl");
    let cases: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let failures: Vec<String> = cases
        .iter()
        .filter_map(|c| {
            let input = c["input"].as_str().unwrap();
            let want = c["expected"].as_str().unwrap();
            let got = preprocess(input);
            (got != want).then(|| format!("{input:?} -> {got:?}, want {want:?}"))
        })
        .collect();
    outcome(
        cases.len() == GOLDEN_CASES && failures.is_empty(),
        format!(
            "{} cases (2 substitution examples, 20 derived log lines), {} mismatches{}",
            cases.len(),
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3E_7A1C);
    let (mut bad, mut undefined_cases) = (0usize, 0usize);
    for i in 0..METRIC_VECTORS {
        let n = rng.gen_range(0..300);
        // Skewed rates so every undefined-denominator case shows up.
        let (pp, pt) = (rng.gen_range(0.0..1.0f64).powi(3), rng.gen_range(0.0..1.0f64).powi(3));
        let pred: Vec<bool> = (0..n).map(|_| rng.gen_bool(pp)).collect();
        let truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(pt)).collect();
        let m = metrics(&confusion(&pred, &truth).unwrap());
        let (p, r, f) = oracle::counted_metrics(&pred, &truth);
        let ok = oracle::close(m.precision, p, METRIC_TOL)
            && oracle::close(m.recall, r, METRIC_TOL)
            && oracle::close(m.f1, f, METRIC_TOL);
        if f.is_none() {
            undefined_cases += 1;
            // Undefined values serialize as null markers, never numbers.
            let report = DetectionReport::new(format!("v{i}"), pred.clone(), &truth).unwrap();
            let json = serde_json::to_value(report.to_file(false)).unwrap();
            let summary = serde_json::to_value(aggregate(&[report])).unwrap();
            if !json["f1"].is_null() || !summary["macro"]["f1"].is_null() || !summary["micro"]["f1"].is_null() {
                bad += 1;
            }
        }
        bad += usize::from(!ok);
    }
    outcome(
        bad == 0 && undefined_cases > 0,
        format!(
            "{METRIC_VECTORS} random vectors vs counting within {METRIC_TOL:e}; {undefined_cases} with undefined F1 all null; {bad} violations"
        ),
    )
}

fn logmeta(args: &[&str], cwd: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_logmeta"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn ablate(dir: &Path, variant: &str, seed: u64, out: &str) -> Result<f64, String> {
    logmeta(
        &["ablate", "--config", "bench/run.toml", "--variant", variant, "--seed", &seed.to_string(), "--out", out, "--no-timings"],
        dir,
    )?;
    let file = dir.join(out).join(variant.replace(':', "-")).join("ablation.json");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&file).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    v["macro_f1"].as_f64().ok_or_else(|| "ablation.json lacks macro_f1".into())
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

struct Benchmark {
    dir: tempfile::TempDir,
    synth_s: f64,
    multi: BTreeMap<u64, f64>,
}

fn benchmark() -> Result<Benchmark, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = Instant::now();
    logmeta(&["synth", "benchmark", "--out", "bench"], dir.path())?;
    Ok(Benchmark {
        dir,
        synth_s: t.elapsed().as_secs_f64(),
        multi: BTreeMap::new(),
    })
}

fn meta_learning_benefit(b: &mut Benchmark) -> Result<Outcome, String> {
    let seed = MULTI_SOURCE_SEEDS[0];
    let t = Instant::now();
    let full = ablate(b.dir.path(), "multi-source", seed, &format!("runs/{seed}"))?;
    let none = ablate(b.dir.path(), "no-meta", seed, &format!("runs/{seed}"))?;
    let secs = b.synth_s + t.elapsed().as_secs_f64();
    b.multi.insert(seed, full);
    Ok(outcome(
        full >= META_MIN_F1 && full >= none + META_MIN_GAIN && secs < META_BUDGET_S,
        format!(
            "seed {seed}, 2 sources -> 2 targets x 20 tasks: meta-trained macro F1 {full:.4} (min {META_MIN_F1}), no-meta {none:.4}, gain {:.4} (min {META_MIN_GAIN}); {secs:.0}s incl. generation (budget {META_BUDGET_S}s)",
            full - none
        ),
    ))
}

fn multi_source_benefit(b: &mut Benchmark) -> Result<Outcome, String> {
    let mut lines = Vec::new();
    let (mut multi_sum, mut single_sum) = (0.0, 0.0);
    for &seed in &MULTI_SOURCE_SEEDS {
        let out = format!("runs/{seed}");
        let multi = match b.multi.get(&seed) {
            Some(&m) => m,
            None => ablate(b.dir.path(), "multi-source", seed, &out)?,
        };
        b.multi.insert(seed, multi);
        let bgl = ablate(b.dir.path(), "single-source:syn-bgl", seed, &out)?;
        let liberty = ablate(b.dir.path(), "single-source:syn-liberty", seed, &out)?;
        let single = (bgl + liberty) / 2.0;
        multi_sum += multi;
        single_sum += single;
        lines.push(format!("seed {seed}: multi {multi:.4}, single {bgl:.4}/{liberty:.4}"));
    }
    let n = MULTI_SOURCE_SEEDS.len() as f64;
    let (multi, single) = (multi_sum / n, single_sum / n);
    Ok(outcome(
        multi >= single + MULTI_SOURCE_MIN_GAIN,
        format!(
            "mean over seeds {MULTI_SOURCE_SEEDS:?}: two-source {multi:.4} vs single-source {single:.4}, gain {:.4} (min {MULTI_SOURCE_MIN_GAIN}); {}",
            multi - single,
            lines.join("; ")
        ),
    ))
}

fn determinism(b: &Benchmark) -> Result<Outcome, String> {
    let seed = MULTI_SOURCE_SEEDS[0];
    let dir = b.dir.path();
    logmeta(&["synth", "benchmark", "--out", "bench-again"], dir)?;
    let corpora_same = tree_bytes(&dir.join("bench")) == tree_bytes(&dir.join("bench-again"));
    // Same command line, so the recorded output directory matches too.
    let out = format!("runs/{seed}");
    let kept = dir.join("first-run");
    std::fs::rename(dir.join(&out).join("multi-source"), &kept).map_err(|e| e.to_string())?;
    ablate(dir, "multi-source", seed, &out)?;
    let first = tree_bytes(&kept);
    let second = tree_bytes(&dir.join(&out).join("multi-source"));
    let keys: BTreeSet<&PathBuf> = first.keys().chain(second.keys()).collect();
    let differing: Vec<String> = keys
        .into_iter()
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let reports = first.keys().filter(|k| k.components().any(|c| c.as_os_str() == "reports")).count();
    Ok(outcome(
        corpora_same && differing.is_empty() && reports > 0,
        format!(
            "synth benchmark rerun identical: {corpora_same}; multi-source ablation rerun (seed {seed}, --no-timings): {} files, {reports} task reports, {} differ{}",
            first.len(),
            differing.len(),
            differing.first().map(|d| format!(" (first: {d})")).unwrap_or_default()
        ),
    ))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(&str, Outcome)> = vec![
        ("gradient oracle", gradient_oracle()),
        ("FOMAML degenerate-case exactness", fomaml_degenerate()),
        ("sampler conformance", sampler_conformance()),
        ("tokenizer oracle", tokenizer_oracle()),
        ("preprocessing golden suite", preprocessing_golden()),
        ("metric oracle", metric_oracle()),
    ];
    let fail = |e: String| outcome(false, e);
    match benchmark() {
        Ok(mut b) => {
            results.push(("meta-learning benefit", meta_learning_benefit(&mut b).unwrap_or_else(fail)));
            results.push(("multi-source benefit", multi_source_benefit(&mut b).unwrap_or_else(fail)));
            results.push(("determinism", determinism(&b).unwrap_or_else(fail)));
        }
        Err(e) => {
            for name in ["meta-learning benefit", "multi-source benefit", "determinism"] {
                results.push((name, fail(format!("benchmark generation failed: {e}"))));
            }
        }
    }
    println!();
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("\nacceptance: {} passed, {failed} failed\n", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
