//! bAbI dialog ingestion, delexicalization, action catalog and vocabulary.

pub mod actions;
pub mod babi;
pub mod corpus;
pub mod delex;
pub mod tokenize;
pub mod vocab;

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use actions::{ActionId, ActionSet};
pub use babi::{parse_split, parse_str, serialize, write_split, Dialogue, KbFact, Turn};
pub use corpus::{PreparedCorpus, Split};
pub use delex::{delexicalize, Delexicalizer, KbContext, SlotType};
pub use tokenize::{tokenize, SILENCE_MARKER, SILENCE_TOKEN, UNKNOWN_TOKEN};
pub use vocab::Vocabulary;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
    #[error("format error: {0}")]
    Format(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.display().to_string(), source }
    }
}

/// Hex SHA-256 of a text artifact.
pub fn fingerprint(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
