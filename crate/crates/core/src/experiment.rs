//! End-to-end experiment pipeline: sample tasks from canonical corpora,
//! embed only the events the tasks touch, meta-train, adapt to each target
//! task and write reports.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ProviderSpec, RunConfig};
use crate::eval::{aggregate, DetectionReport, Section, Summary, Timings};
use crate::ingest::LogSplit;
use crate::meta::{meta_test, meta_train, EpochStats, MetaError, Task};
use crate::model::{Features, LabeledSeq, LstmParams, ModelError};
use crate::represent::{
    load_embedding_table, preprocess, EmbeddingProvider, HashingProvider, RepresentError, Vocabulary,
};
use crate::seed::{rng_for, Stream};
use crate::tasks::{
    build_meta_testing_tasks, build_meta_training_tasks, CorpusLabels, SampleError, SamplerConfig, SplitProfile,
    SplitRange, TaskLayout, TaskManifest,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Represent(#[from] RepresentError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Model(#[from] ModelError),
    /// Inputs inconsistent with the run configuration.
    #[error("{0}")]
    Mismatch(String),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Builds the provider a run config names.
pub fn make_provider(cfg: &RunConfig) -> Result<Arc<dyn EmbeddingProvider>, RepresentError> {
    let mut hashing = HashingProvider::new(cfg.model.embedding_dim, cfg.represent.hash_seed);
    if let Some(path) = &cfg.represent.vocabulary {
        hashing = hashing.with_vocabulary(Arc::new(Vocabulary::load(path, crate::represent::DEFAULT_UNK)?));
    }
    Ok(match &cfg.represent.provider {
        ProviderSpec::Hash => Arc::new(hashing),
        ProviderSpec::Table(path) => {
            let table = load_embedding_table(path, cfg.model.embedding_dim)?;
            if cfg.represent.fallback {
                Arc::new(table.with_fallback(hashing))
            } else {
                Arc::new(table)
            }
        }
    })
}

/// Embeds event ranges, memoizing by preprocessed text. Time spent here is
/// tallied under [`Section::Represent`].
pub struct Embedder {
    provider: Arc<dyn EmbeddingProvider>,
    cache: HashMap<String, Features>,
    pub timings: Timings,
}

impl Embedder {
    pub fn new(provider: Arc<dyn EmbeddingProvider>) -> Self {
        Embedder {
            provider,
            cache: HashMap::new(),
            timings: Timings::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.provider.embedding_dim()
    }

    pub fn cached_texts(&self) -> usize {
        self.cache.len()
    }

    pub fn embed_range(&mut self, corpus: &LogSplit, range: SplitRange) -> Result<LabeledSeq, RepresentError> {
        let mut timings = self.timings;
        let out = timings.timed(Section::Represent, || self.embed_range_untimed(corpus, range));
        self.timings = timings;
        out
    }

    fn embed_range_untimed(&mut self, corpus: &LogSplit, range: SplitRange) -> Result<LabeledSeq, RepresentError> {
        let events = &corpus.events[range.start..range.end()];
        let texts: Vec<String> = events.par_iter().map(|e| preprocess(&e.text)).collect();
        let mut missing: Vec<&String> = texts.iter().filter(|t| !self.cache.contains_key(*t)).collect();
        missing.sort_unstable();
        missing.dedup();
        let provider = &self.provider;
        let fresh = missing
            .par_iter()
            .map(|t| provider.embed(t).map(|e| Features::from(&e)))
            .collect::<Result<Vec<_>, _>>()?;
        for (t, f) in missing.into_iter().zip(fresh) {
            self.cache.insert(t.clone(), f);
        }
        Ok(LabeledSeq {
            start_seq: corpus.start_seq + range.start as u64,
            inputs: texts.iter().map(|t| self.cache[t].clone()).collect(),
            labels: events.iter().map(|e| e.is_anomaly).collect(),
        })
    }

    pub fn task(&mut self, corpus: &LogSplit, layout: &TaskLayout) -> Result<Task, RepresentError> {
        Ok(Task {
            task_id: layout.task_id.clone(),
            system_id: layout.system_id.clone(),
            support: self.embed_range(corpus, layout.support)?,
            query: self.embed_range(corpus, layout.query)?,
        })
    }
}

/// Randomly initialized parameters from the run's init stream.
pub fn init_params(cfg: &RunConfig) -> LstmParams {
    LstmParams::init(cfg.shape(), &mut rng_for(cfg.seed, Stream::Init, 0))
}

fn sampler_config(cfg: &RunConfig) -> SamplerConfig {
    SamplerConfig {
        max_attempts: cfg.tasks.max_attempts,
        ..SamplerConfig::new(cfg.seed)
    }
}

pub fn training_layouts(sources: &[&LogSplit], cfg: &RunConfig) -> Result<Vec<TaskLayout>, SampleError> {
    let labels: Vec<Vec<bool>> = sources.iter().map(|s| s.labels()).collect();
    let corpora: Vec<CorpusLabels<'_>> = sources
        .iter()
        .zip(&labels)
        .map(|(s, l)| CorpusLabels {
            system_id: &s.system_id,
            labels: l,
        })
        .collect();
    let (spec, _) = cfg.tasks.source_profile.specs();
    build_meta_training_tasks(&corpora, &spec, &sampler_config(cfg))
}

pub fn testing_layouts(target: &LogSplit, profile: SplitProfile, cfg: &RunConfig) -> Result<Vec<TaskLayout>, SampleError> {
    let labels = target.labels();
    let (support, query) = profile.specs();
    build_meta_testing_tasks(
        CorpusLabels {
            system_id: &target.system_id,
            labels: &labels,
        },
        cfg.tasks.test_tasks,
        &support,
        &query,
        &sampler_config(cfg),
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub theta: LstmParams,
    pub manifest: TaskManifest,
    pub epochs: Vec<EpochStats>,
    pub train_time_s: f64,
}

/// Samples one task per source and meta-trains from the run's initial
/// parameters.
pub fn train(sources: &[&LogSplit], cfg: &RunConfig, embedder: &mut Embedder) -> Result<TrainOutcome, ExperimentError> {
    check_dim(embedder, cfg)?;
    let layouts = training_layouts(sources, cfg)?;
    let tasks = sources
        .iter()
        .zip(&layouts)
        .map(|(s, l)| embedder.task(s, l))
        .collect::<Result<Vec<_>, _>>()?;
    let mut epochs = Vec::new();
    let mut timings = Timings::default();
    let theta = timings.timed(Section::Train, || {
        meta_train(&init_params(cfg), &tasks, &cfg.meta, |e| epochs.push(e.clone()))
    })?;
    Ok(TrainOutcome {
        theta,
        manifest: TaskManifest {
            seed: cfg.seed,
            tasks: layouts,
        },
        epochs,
        train_time_s: timings.train_time_s(),
    })
}

fn check_dim(embedder: &Embedder, cfg: &RunConfig) -> Result<(), ExperimentError> {
    if embedder.dim() != cfg.model.embedding_dim {
        return Err(ExperimentError::Mismatch(format!(
            "provider dim {} differs from model.embedding_dim {}",
            embedder.dim(),
            cfg.model.embedding_dim
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TargetOutcome {
    pub system_id: String,
    pub reports: Vec<DetectionReport>,
    pub manifest: TaskManifest,
}

impl TargetOutcome {
    pub fn summary(&self, with_timings: bool) -> Summary {
        let mut s = aggregate(&self.reports);
        if !with_timings {
            s.timing = None;
        }
        s
    }
}

/// Adapts `theta` to every meta-testing task of one target.
pub fn evaluate_target(
    theta: &LstmParams,
    target: &LogSplit,
    profile: SplitProfile,
    cfg: &RunConfig,
    embedder: &mut Embedder,
) -> Result<TargetOutcome, ExperimentError> {
    check_dim(embedder, cfg)?;
    if theta.shape() != cfg.shape() {
        return Err(ExperimentError::Model(ModelError::ShapeMismatch(format!(
            "checkpoint {:?} vs config {:?}",
            theta.shape(),
            cfg.shape()
        ))));
    }
    let layouts = testing_layouts(target, profile, cfg)?;
    let mut reports = Vec::with_capacity(layouts.len());
    for layout in &layouts {
        let task = embedder.task(target, layout)?;
        reports.push(meta_test(theta, &task, &cfg.meta)?);
    }
    Ok(TargetOutcome {
        system_id: target.system_id.clone(),
        reports,
        manifest: TaskManifest {
            seed: cfg.seed,
            tasks: layouts,
        },
    })
}

/// Ablation variants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Variant {
    MultiSource,
    SingleSource(String),
    /// Random initialization with the same fine-tuning protocol.
    NoMeta,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "multi-source" => Ok(Variant::MultiSource),
            "no-meta" => Ok(Variant::NoMeta),
            _ => match s.strip_prefix("single-source:") {
                Some(id) if !id.is_empty() => Ok(Variant::SingleSource(id.to_string())),
                _ => Err(format!(
                    "variant must be multi-source, single-source:<id> or no-meta, got {s:?}"
                )),
            },
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::MultiSource => f.write_str("multi-source"),
            Variant::SingleSource(id) => write!(f, "single-source:{id}"),
            Variant::NoMeta => f.write_str("no-meta"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub variant: Variant,
    pub training: Option<TrainOutcome>,
    pub targets: Vec<TargetOutcome>,
}

impl AblationOutcome {
    /// Mean over targets of macro F1 with undefined tasks scored 0.
    pub fn macro_f1(&self) -> f64 {
        let n = self.targets.len().max(1) as f64;
        self.targets
            .iter()
            .map(|t| aggregate(&t.reports).macro_.f1_undefined_as_zero)
            .sum::<f64>()
            / n
    }
}

/// Runs one variant over `sources` and evaluates it on every target.
pub fn run_variant(
    variant: &Variant,
    sources: &[&LogSplit],
    targets: &[(&LogSplit, SplitProfile)],
    cfg: &RunConfig,
    embedder: &mut Embedder,
) -> Result<AblationOutcome, ExperimentError> {
    let (theta, training) = match variant {
        Variant::NoMeta => (init_params(cfg), None),
        Variant::MultiSource => {
            let t = train(sources, cfg, embedder)?;
            (t.theta.clone(), Some(t))
        }
        Variant::SingleSource(id) => {
            let chosen: Vec<&LogSplit> = sources.iter().copied().filter(|s| &s.system_id == id).collect();
            if chosen.is_empty() {
                return Err(ExperimentError::Mismatch(format!("no source corpus with system id {id:?}")));
            }
            let t = train(&chosen, cfg, embedder)?;
            (t.theta.clone(), Some(t))
        }
    };
    let targets = targets
        .iter()
        .map(|(t, p)| evaluate_target(&theta, t, *p, cfg, embedder))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AblationOutcome {
        variant: variant.clone(),
        training,
        targets,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| ExperimentError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn write_telemetry(path: &Path, epochs: &[EpochStats]) -> Result<(), ExperimentError> {
    let mut buf = Vec::new();
    for e in epochs {
        serde_json::to_writer(&mut buf, e).expect("serializable");
        buf.write_all(b"\n").expect("vec write");
    }
    write_bytes(path, &buf)
}

/// Run-level record next to a target's reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetSummary {
    pub system_id: String,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Writes `<dir>/<system>/reports/<task>.json`, `summary.json` and
/// `manifest.json` for one target.
pub fn write_target(dir: &Path, outcome: &TargetOutcome, with_timings: bool) -> Result<(), ExperimentError> {
    let base = dir.join(&outcome.system_id);
    for r in &outcome.reports {
        write_json(&base.join("reports").join(format!("{}.json", r.task_id)), &r.to_file(with_timings))?;
    }
    write_json(
        &base.join("summary.json"),
        &TargetSummary {
            system_id: outcome.system_id.clone(),
            summary: outcome.summary(with_timings),
        },
    )?;
    write_json(&base.join("manifest.json"), &outcome.manifest)
}
