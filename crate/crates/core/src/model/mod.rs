//! Base model: fixed-window LSTM over event embeddings with a two-class
//! softmax head, exact backpropagation through time, and optimizers.

mod checkpoint;
mod lstm;
mod optim;
mod params;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint_from, save_checkpoint, write_checkpoint_to, MAGIC as CHECKPOINT_MAGIC};
pub use lstm::{
    backward, batch_loss, batch_loss_and_grad, batch_probabilities, forward, loss, make_windows, predict,
    ClassWeighting, ClassWeights, Features, ForwardCache, LabeledSeq, Prediction, Window,
};
pub use optim::{adamw_step, sgd_step, sgd_step_in_place, AdamState, AdamWConfig, Optimizer, OptimizerKind};
pub use params::{Gradients, LstmParams, ModelShape, CLASSES, GATE_ORDER};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("window size must be at least 1, got {0}")]
    InvalidK(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
