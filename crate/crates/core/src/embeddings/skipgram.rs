//! Skip-gram with negative sampling over words plus character n-grams.
//!
//! A word's input representation is the mean of its own row and its n-gram
//! rows; the gradient of that mean is applied in full to every contributing
//! row. The output side has one row per word. Single-threaded and fully
//! determined by the seed.

use std::collections::{BTreeMap, HashMap};

use rand::distr::weighted::WeightedIndex;
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{char_ngrams, EmbeddingError, EmbeddingTable};
use crate::data::{tokenize, Dialogue};

#[derive(Clone, Debug, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub epochs: usize,
    pub window: usize,
    pub negatives: usize,
    /// Initial learning rate, decayed linearly to zero over all epochs.
    pub lr: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig { dim: 300, epochs: 100, window: 5, negatives: 5, lr: 0.05, seed: 1 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SkipGramReport {
    /// Mean negative-sampling loss per (center, context) pair, per epoch.
    pub epoch_losses: Vec<f64>,
}

/// User and system utterances of `dialogues`, tokenized the same way as
/// model input.
pub fn training_sentences(dialogues: &[Dialogue]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for t in dialogues.iter().flat_map(|d| &d.turns) {
        out.push(t.user_tokens.clone());
        out.push(tokenize(&t.raw_system));
    }
    out.retain(|s| !s.is_empty());
    out
}

struct Model {
    dim: usize,
    input: Vec<f32>,
    output: Vec<f32>,
    hidden: Vec<f32>,
    grad: Vec<f32>,
}

impl Model {
    fn compute_hidden(&mut self, rows: &[usize]) {
        let d = self.dim;
        self.hidden.iter_mut().for_each(|h| *h = 0.0);
        for &r in rows {
            for (h, x) in self.hidden.iter_mut().zip(&self.input[r * d..(r + 1) * d]) {
                *h += x;
            }
        }
        let inv = 1.0 / rows.len() as f32;
        self.hidden.iter_mut().for_each(|h| *h *= inv);
    }

    /// One logistic term; returns its loss and updates the output row.
    fn binary_logistic(&mut self, target: usize, label: bool, lr: f32) -> f64 {
        let d = self.dim;
        let out = &mut self.output[target * d..(target + 1) * d];
        let dot: f32 = out.iter().zip(&self.hidden).map(|(a, b)| a * b).sum();
        let score = 1.0 / (1.0 + (-dot).exp());
        let alpha = lr * (if label { 1.0 } else { 0.0 } - score);
        for ((g, o), h) in self.grad.iter_mut().zip(out.iter_mut()).zip(&self.hidden) {
            *g += alpha * *o;
            *o += alpha * h;
        }
        let p = if label { score } else { 1.0 - score };
        -(p.max(1e-7) as f64).ln()
    }
}

pub fn train_subword_skipgram(
    sentences: &[Vec<String>],
    cfg: &SkipGramConfig,
) -> Result<(EmbeddingTable, SkipGramReport), EmbeddingError> {
    if cfg.dim == 0 || cfg.epochs == 0 || cfg.window == 0 || !(cfg.lr > 0.0) {
        return Err(EmbeddingError::Config(format!("invalid skip-gram settings {cfg:?}")));
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for t in sentences.iter().flatten() {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let words: Vec<&str> = counts.keys().copied().collect();
    let word_id: HashMap<&str, usize> = words.iter().enumerate().map(|(i, w)| (*w, i)).collect();
    let nw = words.len();

    let mut ngram_names: Vec<String> = Vec::new();
    let mut ngram_id: HashMap<String, usize> = HashMap::new();
    let subwords: Vec<Vec<usize>> = words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let mut rows = vec![i];
            for g in char_ngrams(w) {
                let id = *ngram_id.entry(g.clone()).or_insert_with(|| {
                    ngram_names.push(g);
                    ngram_names.len() - 1
                });
                rows.push(nw + id);
            }
            rows
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let bound = 1.0 / d as f32;
    let init = Uniform::new_inclusive(-bound, bound).expect("finite bounds");
    let mut model = Model {
        dim: d,
        input: (0..(nw + ngram_names.len()) * d).map(|_| init.sample(&mut rng)).collect(),
        output: vec![0.0; nw * d],
        hidden: vec![0.0; d],
        grad: vec![0.0; d],
    };
    let negatives = WeightedIndex::new(words.iter().map(|w| (counts[w] as f64).powf(0.75)))
        .map_err(|e| EmbeddingError::Config(e.to_string()))?;

    let ids: Vec<Vec<usize>> = sentences.iter().map(|s| s.iter().map(|t| word_id[t.as_str()]).collect()).collect();
    let tokens_per_epoch: usize = ids.iter().map(Vec::len).sum();
    let total = (tokens_per_epoch * cfg.epochs) as f64;
    let mut processed = 0usize;
    let mut report = SkipGramReport::default();

    for epoch in 0..cfg.epochs {
        let (mut loss_sum, mut pairs) = (0.0f64, 0usize);
        for sent in &ids {
            for pos in 0..sent.len() {
                let lr = (cfg.lr * (1.0 - processed as f64 / total)) as f32;
                processed += 1;
                let b = rng.random_range(1..=cfg.window);
                let lo = pos.saturating_sub(b);
                let hi = (pos + b).min(sent.len() - 1);
                let rows = &subwords[sent[pos]];
                for c in lo..=hi {
                    if c == pos {
                        continue;
                    }
                    let target = sent[c];
                    model.compute_hidden(rows);
                    model.grad.iter_mut().for_each(|g| *g = 0.0);
                    let mut loss = model.binary_logistic(target, true, lr);
                    if nw > 1 {
                        for _ in 0..cfg.negatives {
                            let mut neg = negatives.sample(&mut rng);
                            while neg == target {
                                neg = negatives.sample(&mut rng);
                            }
                            loss += model.binary_logistic(neg, false, lr);
                        }
                    }
                    for &r in rows {
                        for (x, g) in model.input[r * d..(r + 1) * d].iter_mut().zip(&model.grad) {
                            *x += g;
                        }
                    }
                    loss_sum += loss;
                    pairs += 1;
                }
            }
        }
        let mean = if pairs > 0 { loss_sum / pairs as f64 } else { 0.0 };
        if !mean.is_finite() {
            return Err(EmbeddingError::Config(format!("loss diverged at epoch {}", epoch + 1)));
        }
        log::info!("skip-gram epoch {}/{}: loss {:.5}", epoch + 1, cfg.epochs, mean);
        report.epoch_losses.push(mean);
    }

    let mut table = EmbeddingTable::new(d);
    for (i, w) in words.iter().enumerate() {
        model.compute_hidden(&subwords[i]);
        table.insert_word(w, &model.hidden);
    }
    for (j, g) in ngram_names.iter().enumerate() {
        let r = nw + j;
        table.insert_ngram(g, &model.input[r * d..(r + 1) * d]);
    }
    Ok((table, report))
}
