//! `logmeta`: ingest logs, synthesize corpora, meta-train and evaluate
//! cross-system anomaly detectors.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use logmeta_core::config::{ConfigError, ProviderSpec, TargetSpec};
use logmeta_core::experiment::{
    evaluate_target, make_provider, run_variant, train, write_json, write_target, write_telemetry, Embedder,
    ExperimentError, TargetOutcome, Variant,
};
use logmeta_core::ingest::{load_canonical, normalize_corpus, parse_supercomputer_file, write_canonical, IngestError};
use logmeta_core::meta::MetaError;
use logmeta_core::model::{load_checkpoint, save_checkpoint, ModelError};
use logmeta_core::represent::{preprocess, EmbeddingTable, RepresentError};
use logmeta_core::synth::{generate_benchmark, BENCHMARK_SEED, generate_corpus, make_benchmark, Role, SynthError, SystemProfile};
use logmeta_core::tasks::{SampleError, SplitProfile};
use logmeta_core::{LogSplit, RunConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "logmeta", version, about = "Cross-system few-shot log anomaly detection")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Meta-testing tasks per target.
    #[arg(long, global = true)]
    tasks: Option<usize>,
    /// Embedding provider: `hash` or `table:<path>`.
    #[arg(long, global = true)]
    provider: Option<String>,
    /// Output directory (or file, for single-artifact commands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write null timings so reruns are byte-identical.
    #[arg(long, global = true)]
    no_timings: bool,
    /// Config override, e.g. `--set meta.alpha=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw supercomputer log into the canonical JSON-lines format.
    Ingest {
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate a corpus from a profile file, or the four-system benchmark.
    Synth {
        /// Profile TOML path, or `benchmark`.
        source: String,
        /// Events to generate from a profile.
        #[arg(long, default_value_t = 100_000)]
        events: usize,
    },
    /// Precompute hashing-provider embeddings into a CSLG table.
    Embed {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Meta-train on the source corpora.
    Train {
        /// Source corpus; repeatable. Defaults to `data.sources`.
        #[arg(long = "source")]
        sources: Vec<PathBuf>,
    },
    /// Adapt a checkpoint to every meta-testing task of each target.
    AdaptEval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target corpus; repeatable. Defaults to `data.targets`.
        #[arg(long = "target")]
        targets: Vec<PathBuf>,
        /// Split profile for `--target` corpora.
        #[arg(long, default_value = "tbird")]
        profile: String,
    },
    /// Run one ablation variant over the configured sources and targets.
    Ablate {
        /// `multi-source`, `single-source:<system id>` or `no-meta`.
        #[arg(long)]
        variant: String,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Data(String),
    Infeasible(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Infeasible(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Infeasible(m) => m,
        }
    }
}

fn chain(e: &dyn std::error::Error) -> String {
    let mut s = e.to_string();
    let mut cur = e.source();
    while let Some(c) = cur {
        let m = c.to_string();
        if !s.contains(&m) {
            s.push_str(": ");
            s.push_str(&m);
        }
        cur = c.source();
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(chain(&e))
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure::Data(chain(&e))
    }
}

impl From<RepresentError> for Failure {
    fn from(e: RepresentError) -> Self {
        match e {
            RepresentError::DimMismatch { .. } => Failure::Config(chain(&e)),
            _ => Failure::Data(chain(&e)),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidK(_) | ModelError::ShapeMismatch(_) => Failure::Config(chain(&e)),
            _ => Failure::Data(chain(&e)),
        }
    }
}

impl From<SampleError> for Failure {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::InvalidSpec(_) => Failure::Config(chain(&e)),
            _ => Failure::Infeasible(chain(&e)),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        Failure::Config(chain(&e))
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Sample(s) => s.into(),
            ExperimentError::Represent(r) => r.into(),
            ExperimentError::Model(m) => m.into(),
            ExperimentError::Meta(MetaError::InvalidConfig(m)) | ExperimentError::Mismatch(m) => Failure::Config(m),
            ExperimentError::Meta(MetaError::Model(m)) => m.into(),
            other => Failure::Data(chain(&other)),
        }
    }
}

fn config(common: &Common) -> Result<RunConfig, Failure> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(n) = common.tasks {
        overrides.push(format!("tasks.test_tasks={n}"));
    }
    if let Some(p) = &common.provider {
        overrides.push(format!("represent.provider={}", toml_string(p)));
    }
    if let Some(o) = &common.out {
        overrides.push(format!("output.dir={}", toml_string(&o.to_string_lossy())));
    }
    if common.no_timings {
        overrides.push("output.timings=false".into());
    }
    let mut cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
    // Flag paths are relative to the working directory, not the config file.
    if let Some(p) = &common.provider {
        cfg.represent.provider = p.parse().map_err(Failure::Config)?;
    }
    if let Some(o) = &common.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

// JSON string escapes are valid TOML basic strings.
fn toml_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn load_corpora(paths: &[PathBuf]) -> Result<Vec<LogSplit>, Failure> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let c = load_canonical(p)?;
        if c.is_empty() {
            return Err(Failure::Data(format!("{}: corpus is empty", p.display())));
        }
        if !seen.insert(c.system_id.clone()) {
            return Err(Failure::Config(format!("system id {:?} appears twice", c.system_id)));
        }
        out.push(c);
    }
    Ok(out)
}

fn require_exists(paths: &[PathBuf]) -> Result<(), Failure> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(Failure::Config(format!("{} does not exist", p.display()))),
        None => Ok(()),
    }
}

fn embedder(cfg: &RunConfig) -> Result<Embedder, Failure> {
    Ok(Embedder::new(make_provider(cfg)?))
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    let path = dir.join("run.toml");
    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    std::fs::write(&path, cfg.to_toml()).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn print_target(t: &TargetOutcome) {
    let s = t.summary(false);
    let f = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{:.2}", 100.0 * x));
    println!(
        "{}: {} tasks, macro P {} R {} F1 {}, micro F1 {}",
        t.system_id,
        t.reports.len(),
        f(s.macro_.precision),
        f(s.macro_.recall),
        f(s.macro_.f1),
        f(s.micro.f1)
    );
}

fn cmd_ingest(common: &Common, input: &Path) -> Result<(), Failure> {
    let out = common
        .out
        .as_deref()
        .ok_or_else(|| Failure::Config("ingest needs --out <file.jsonl>".into()))?;
    require_exists(&[input.to_path_buf()])?;
    let raw = parse_supercomputer_file(input)?;
    let events = normalize_corpus(&raw.records);
    let dropped = raw.records.len() - events.len();
    write_canonical(out, &events)?;
    println!("{} events written, {} lines skipped, {} records dropped", events.len(), raw.skipped, dropped);
    Ok(())
}

fn cmd_synth(common: &Common, source: &str, n_events: usize) -> Result<(), Failure> {
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    if source == "benchmark" {
        let seed = common.seed.unwrap_or(BENCHMARK_SEED);
        let systems = make_benchmark(seed);
        let corpora = generate_benchmark(&systems)?;
        let mut cfg = RunConfig::benchmark();
        for (s, c) in systems.iter().zip(&corpora) {
            let file = format!("{}.jsonl", c.system_id);
            write_canonical(&out.join(&file), &c.events)?;
            match s.role {
                Role::Source => cfg.data.sources.push(PathBuf::from(&file)),
                Role::Target => cfg.data.targets.push(TargetSpec {
                    path: PathBuf::from(&file),
                    profile: s.split_profile,
                }),
            }
            println!("{}: {} events, {} anomalous", c.system_id, c.len(), c.anomaly_count());
        }
        write_config(&out, &cfg)?;
        return Ok(());
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut profile = SystemProfile::from_toml(&text)?;
    if let Some(seed) = common.seed {
        profile.seed = seed;
    }
    let corpus = generate_corpus(&profile, n_events)?;
    let file = out.join(format!("{}.jsonl", profile.system_id));
    write_canonical(&file, &corpus.events)?;
    println!("{}: {} events, {} anomalous", profile.system_id, corpus.len(), corpus.anomaly_count());
    Ok(())
}

fn cmd_embed(common: &Common, corpus: &Path) -> Result<(), Failure> {
    let cfg = config(common)?;
    if cfg.represent.provider != ProviderSpec::Hash {
        return Err(Failure::Config("embed computes hashing-provider tables; use --provider hash".into()));
    }
    let out = common
        .out
        .as_deref()
        .ok_or_else(|| Failure::Config("embed needs --out <table.cslg>".into()))?;
    require_exists(&[corpus.to_path_buf()])?;
    let split = load_canonical(corpus)?;
    let provider = make_provider(&cfg)?;
    let mut table = EmbeddingTable::new(cfg.model.embedding_dim);
    let mut seen = HashSet::new();
    for e in &split.events {
        let text = preprocess(&e.text);
        if seen.contains(&logmeta_core::represent::fnv1a64(text.as_bytes())) {
            continue;
        }
        let v = provider.embed(&text)?;
        table.insert_text(&text, v.values, &mut seen);
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    }
    table.write(out)?;
    println!("{} events, {} unique texts, dim {}", split.len(), table.records.len(), table.dim);
    Ok(())
}

fn cmd_train(common: &Common, sources: &[PathBuf]) -> Result<(), Failure> {
    let mut cfg = config(common)?;
    if !sources.is_empty() {
        cfg.data.sources = sources.to_vec();
    }
    if cfg.data.sources.is_empty() {
        return Err(Failure::Config("no source corpora: pass --source or set data.sources".into()));
    }
    cfg.check_paths()?;
    let corpora = load_corpora(&cfg.data.sources)?;
    let refs: Vec<&LogSplit> = corpora.iter().collect();
    let mut emb = embedder(&cfg)?;
    let outcome = train(&refs, &cfg, &mut emb)?;
    let dir = &cfg.output.dir;
    write_config(dir, &cfg)?;
    save_checkpoint(&dir.join("checkpoint.cslm"), &outcome.theta)?;
    write_json(&dir.join("manifest.json"), &outcome.manifest)?;
    write_telemetry(&dir.join("telemetry.jsonl"), &outcome.epochs)?;
    let last = outcome.epochs.last().map_or(f64::NAN, |e| e.meta_loss);
    println!(
        "trained {} epochs on {} sources, final meta-loss {last:.4}, {:.1}s",
        outcome.epochs.len(),
        corpora.len(),
        outcome.train_time_s
    );
    Ok(())
}

fn targets_for(cfg: &RunConfig, targets: &[PathBuf], profile: &str) -> Result<Vec<TargetSpec>, Failure> {
    if targets.is_empty() {
        return Ok(cfg.data.targets.clone());
    }
    let profile = SplitProfile::parse(profile)
        .ok_or_else(|| Failure::Config(format!("profile must be source, tbird or spirit, got {profile:?}")))?;
    Ok(targets
        .iter()
        .map(|p| TargetSpec {
            path: p.clone(),
            profile,
        })
        .collect())
}

fn cmd_adapt_eval(common: &Common, checkpoint: &Path, targets: &[PathBuf], profile: &str) -> Result<(), Failure> {
    let mut cfg = config(common)?;
    cfg.data.targets = targets_for(&cfg, targets, profile)?;
    if cfg.data.targets.is_empty() {
        return Err(Failure::Config("no target corpora: pass --target or set data.targets".into()));
    }
    require_exists(&[checkpoint.to_path_buf()])?;
    cfg.check_paths()?;
    let theta = load_checkpoint(checkpoint)?;
    let paths: Vec<PathBuf> = cfg.data.targets.iter().map(|t| t.path.clone()).collect();
    let corpora = load_corpora(&paths)?;
    let mut emb = embedder(&cfg)?;
    for (c, spec) in corpora.iter().zip(&cfg.data.targets) {
        let outcome = evaluate_target(&theta, c, spec.profile, &cfg, &mut emb)?;
        write_target(&cfg.output.dir, &outcome, cfg.output.timings)?;
        print_target(&outcome);
    }
    Ok(())
}

fn cmd_ablate(common: &Common, variant: &str) -> Result<(), Failure> {
    let cfg = config(common)?;
    let variant: Variant = variant.parse().map_err(Failure::Config)?;
    if cfg.data.sources.is_empty() || cfg.data.targets.is_empty() {
        return Err(Failure::Config("ablation needs data.sources and data.targets".into()));
    }
    cfg.check_paths()?;
    let sources = load_corpora(&cfg.data.sources)?;
    let target_paths: Vec<PathBuf> = cfg.data.targets.iter().map(|t| t.path.clone()).collect();
    let targets = load_corpora(&target_paths)?;
    let source_refs: Vec<&LogSplit> = sources.iter().collect();
    let target_refs: Vec<(&LogSplit, SplitProfile)> =
        targets.iter().zip(&cfg.data.targets).map(|(c, t)| (c, t.profile)).collect();
    let mut emb = embedder(&cfg)?;
    let outcome = run_variant(&variant, &source_refs, &target_refs, &cfg, &mut emb)?;

    let dir = cfg.output.dir.join(variant.to_string().replace(':', "-"));
    write_config(&dir, &cfg)?;
    if let Some(t) = &outcome.training {
        save_checkpoint(&dir.join("checkpoint.cslm"), &t.theta)?;
        write_json(&dir.join("manifest.json"), &t.manifest)?;
        write_telemetry(&dir.join("telemetry.jsonl"), &t.epochs)?;
    }
    for t in &outcome.targets {
        write_target(&dir, t, cfg.output.timings)?;
        print_target(t);
    }
    let per_target: Vec<_> = outcome
        .targets
        .iter()
        .map(|t| {
            let s = t.summary(false);
            json!({
                "system_id": t.system_id,
                "macro_f1": s.macro_.f1,
                "macro_f1_undefined_as_zero": s.macro_.f1_undefined_as_zero,
            })
        })
        .collect();
    write_json(
        &dir.join("ablation.json"),
        &json!({
            "variant": variant.to_string(),
            "seed": cfg.seed,
            "macro_f1": outcome.macro_f1(),
            "targets": per_target,
        }),
    )?;
    println!("{variant}: macro F1 {:.4}", outcome.macro_f1());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    match &cli.command {
        Command::Ingest { input } => cmd_ingest(c, input),
        Command::Synth { source, events } => cmd_synth(c, source, *events),
        Command::Embed { corpus } => cmd_embed(c, corpus),
        Command::Train { sources } => cmd_train(c, sources),
        Command::AdaptEval {
            checkpoint,
            targets,
            profile,
        } => cmd_adapt_eval(c, checkpoint, targets, profile),
        Command::Ablate { variant } => cmd_ablate(c, variant),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
