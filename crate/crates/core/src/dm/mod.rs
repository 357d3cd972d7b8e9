//! The dialogue manager: per-turn features, a dialogue-level LSTM, a fully
//! connected layer and a (maskable) softmax over the action catalog, plus
//! training, evaluation metrics and checkpoints.

mod checkpoint;
mod config;
mod metrics;
mod model;
mod train;

use std::path::Path;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointMetrics, FORMAT_VERSION};
pub use config::ModelConfig;
pub use metrics::{dialogue_accuracy, evaluate, turn_accuracy, Evaluation};
pub use model::{ActionMask, DialogueState, HcnModel, ModelDims, TurnOutput};
pub use train::{train_model, EpochStats, TrainOptions, TrainReport, Trainer};

use crate::data::DataError;
use crate::embeddings::EmbeddingError;
use crate::grad::GradError;

#[derive(Debug, Error)]
pub enum DmError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),
    #[error("corrupt checkpoint: {0}")]
    Format(String),
    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DmError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DmError::Io { path: path.display().to_string(), source }
    }
}

/// SplitMix64 finalizer folded over `parts`; used to derive per-dialogue
/// dropout seeds from the run seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut x = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        x ^= p;
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}
