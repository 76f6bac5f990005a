//! Cross-system log anomaly detection: event representation, a windowed
//! LSTM classifier, first-order MAML across source systems and few-shot
//! adaptation to target systems.

pub mod config;
pub mod eval;
pub mod experiment;
pub mod ingest;
pub mod meta;
pub mod model;
pub mod represent;
pub mod seed;
pub mod synth;
pub mod tasks;

pub use config::{ProviderSpec, RunConfig};
pub use eval::{Confusion, DetectionReport, Metrics, Summary};
pub use ingest::{LogEvent, LogSplit, RawLogRecord};
pub use meta::{MetaConfig, Task};
pub use model::{LstmParams, ModelShape};
pub use represent::{EmbeddingProvider, EventEmbedding, Vocabulary};
pub use tasks::{SamplerConfig, SplitProfile, SplitSpec, TaskManifest};
