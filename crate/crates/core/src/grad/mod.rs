//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records primitive operations as they are evaluated. Calling
//! [`Graph::backward`] on a scalar node walks the tape once in reverse and
//! returns a gradient for every parameter in the borrowed [`ParamStore`].
//! The primitive set is deliberately small: it is what the dialogue manager
//! and its three utterance encoders need, with fused LSTM and convolution
//! kernels so a dialogue unrolls into a few hundred nodes.

mod adam;
mod graph;
mod params;
mod tensor;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use graph::{masked_softmax, sigmoid, softmax_xent_values, Activation, Graph, Mode, NodeId};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("index {index} out of range for {len} classes")]
    Index { index: usize, len: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite value produced by {op} during {stage} pass")]
    NonFinite { op: &'static str, stage: &'static str },
}
