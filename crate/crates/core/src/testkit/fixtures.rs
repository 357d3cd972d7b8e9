//! Ready-made corpora, embedding tables and configs for tests.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::synthetic::{generate_split, SyntheticConfig};
use crate::data::PreparedCorpus;
use crate::dm::ModelConfig;
use crate::embeddings::{train_subword_skipgram, training_sentences, EmbeddingTable, SkipGramConfig};

/// Synthetic corpus with the given split sizes (train/dev/test seeds 1/2/3).
pub fn synthetic_corpus(train: usize, dev: usize, test: usize) -> PreparedCorpus {
    let cfg = SyntheticConfig::default();
    PreparedCorpus::from_splits(generate_split(&cfg, train, 1), generate_split(&cfg, dev, 2), generate_split(&cfg, test, 3))
        .expect("synthetic corpus is well formed")
}

/// Uniform random vectors for every vocabulary token.
pub fn random_table(corpus: &PreparedCorpus, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = EmbeddingTable::new(dim);
    for tok in corpus.vocab.tokens() {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
        t.insert_word(tok, &v);
    }
    t
}

/// Subword skip-gram vectors trained on the corpus' training split.
pub fn skipgram_table(corpus: &PreparedCorpus, dim: usize, epochs: usize) -> EmbeddingTable {
    let cfg = SkipGramConfig { dim, epochs, ..SkipGramConfig::default() };
    train_subword_skipgram(&training_sentences(&corpus.train), &cfg).expect("non-empty corpus").0
}

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// One of the shipped configs, e.g. `"fasttext_cnn"`.
pub fn shipped_config(name: &str) -> ModelConfig {
    ModelConfig::load(&configs_dir().join(format!("{name}.cfg"))).expect("shipped config parses")
}

pub const SHIPPED_CONFIGS: [&str; 6] =
    ["fasttext", "fasttext_cnn", "fasttext_rnn", "word2vec", "word2vec_cnn", "word2vec_rnn"];
