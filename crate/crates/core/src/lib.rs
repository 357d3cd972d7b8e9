//! Hybrid Code Network dialogue managers.
//!
//! A dialogue-level LSTM tracks conversation state across turns and selects
//! one of a fixed catalog of delexicalized system responses. Each user turn is
//! turned into a feature vector by one of three encoders: the averaged word
//! embedding plus bag-of-words baseline, a window convolution with
//! max-over-time pooling, or an LSTM over the word vectors.

pub mod data;
pub mod dm;
pub mod embeddings;
pub mod encoders;
pub mod grad;
pub mod hpo;
mod init;

#[cfg(any(test, feature = "testkit"))]
pub mod testkit;
