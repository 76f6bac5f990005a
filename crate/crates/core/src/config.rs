//! Run configuration: one TOML document whose keys may be written as
//! sections or as flat dotted keys (`meta.alpha = 0.05`), with
//! `key=value` overrides layered on top.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::meta::MetaConfig;
use crate::model::ModelShape;
use crate::represent::DEFAULT_EMBEDDING_DIM;
use crate::tasks::{SplitProfile, DEFAULT_MAX_ATTEMPTS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("override {0:?}: expected key=value")]
    BadOverride(String),
    #[error("override {key}: {reason}")]
    OverridePath { key: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where event embeddings come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ProviderSpec {
    Hash,
    Table(PathBuf),
}

impl TryFrom<String> for ProviderSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl std::str::FromStr for ProviderSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hash" => Ok(ProviderSpec::Hash),
            _ => match s.strip_prefix("table:") {
                Some(p) if !p.is_empty() => Ok(ProviderSpec::Table(PathBuf::from(p))),
                _ => Err(format!("provider must be \"hash\" or \"table:<path>\", got {s:?}")),
            },
        }
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderSpec::Hash => f.write_str("hash"),
            ProviderSpec::Table(p) => write!(f, "table:{}", p.display()),
        }
    }
}

impl From<ProviderSpec> for String {
    fn from(p: ProviderSpec) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            hidden_dim: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TasksConfig {
    /// Meta-testing tasks per target system.
    pub test_tasks: usize,
    pub max_attempts: usize,
    pub source_profile: SplitProfile,
}

impl Default for TasksConfig {
    fn default() -> Self {
        TasksConfig {
            test_tasks: 20,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            source_profile: SplitProfile::Source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepresentConfig {
    pub provider: ProviderSpec,
    pub hash_seed: u64,
    /// WordPiece vocabulary for the hashing provider; whitespace words when
    /// absent.
    pub vocabulary: Option<PathBuf>,
    /// Table provider falls back to hashing on a miss.
    pub fallback: bool,
}

impl Default for RepresentConfig {
    fn default() -> Self {
        RepresentConfig {
            provider: ProviderSpec::Hash,
            hash_seed: 0,
            vocabulary: None,
            fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub path: PathBuf,
    pub profile: SplitProfile,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub sources: Vec<PathBuf>,
    pub targets: Vec<TargetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Wall-clock timings in reports; off for byte-comparable reruns.
    pub timings: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            timings: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub meta: MetaConfig,
    pub tasks: TasksConfig,
    pub represent: RepresentConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut table = root;
    for p in path {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
        table = entry.as_table_mut().ok_or_else(|| ConfigError::OverridePath {
            key: key.into(),
            reason: format!("{p} is not a section"),
        })?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses `text`, applies `key=value` overrides, then validates.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut root: toml::Table = toml::from_str(text)?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            if k.trim().is_empty() {
                return Err(ConfigError::BadOverride(o.clone()));
            }
            set_dotted(&mut root, k.trim(), parse_value(v.trim()))?;
        }
        let mut cfg: RunConfig = toml::Value::Table(root).try_into()?;
        cfg.meta.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (defaults when `None`) and resolves relative data paths
    /// against the file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let Some(path) = path else {
            return Self::from_toml_with("", overrides);
        };
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_with(&text, overrides)?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.data.sources.iter_mut().for_each(fix);
        self.data.targets.iter_mut().for_each(|t| fix(&mut t.path));
        if let Some(v) = self.represent.vocabulary.as_mut() {
            fix(v);
        }
        if let ProviderSpec::Table(p) = &mut self.represent.provider {
            fix(p);
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.meta.seed = seed;
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape::new(self.model.embedding_dim, self.model.hidden_dim)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.meta.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let invalid = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.model.embedding_dim < 1 || self.model.hidden_dim < 1 {
            return invalid("model dimensions must be at least 1");
        }
        if self.tasks.test_tasks < 1 {
            return invalid("tasks.test_tasks must be at least 1");
        }
        if self.tasks.max_attempts < 1 {
            return invalid("tasks.max_attempts must be at least 1");
        }
        Ok(())
    }

    /// Every referenced input path exists.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let mut paths: Vec<&Path> = self.data.sources.iter().map(|p| p.as_path()).collect();
        paths.extend(self.data.targets.iter().map(|t| t.path.as_path()));
        if let Some(v) = &self.represent.vocabulary {
            paths.push(v);
        }
        if let ProviderSpec::Table(p) = &self.represent.provider {
            paths.push(p);
        }
        match paths.into_iter().find(|p| !p.exists()) {
            Some(p) => Err(ConfigError::Invalid(format!("{} does not exist", p.display()))),
            None => Ok(()),
        }
    }

    /// Settings for the synthetic benchmark: a small model over wide hash
    /// features, one inner step during meta-training, ten plain-descent
    /// fine-tuning steps and a high decision threshold to offset the
    /// inverse-frequency class weights.
    pub fn benchmark() -> Self {
        let mut cfg = RunConfig {
            seed: 1,
            ..Default::default()
        };
        cfg.model = ModelConfig {
            embedding_dim: 4096,
            hidden_dim: 16,
        };
        cfg.meta.k = 20;
        cfg.meta.alpha = 0.2;
        cfg.meta.beta = 0.03;
        cfg.meta.inner_steps = 1;
        cfg.meta.test_inner_steps = 10;
        cfg.meta.meta_epochs = 100;
        cfg.meta.adamw.weight_decay = 1.0;
        cfg.meta.threshold = 0.9;
        cfg.meta.seed = cfg.seed;
        cfg
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
