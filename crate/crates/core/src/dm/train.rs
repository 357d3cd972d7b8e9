use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::evaluate;
use super::model::{HcnModel, ModelDims};
use super::{derive_seed, DmError, ModelConfig};
use crate::data::{Dialogue, PreparedCorpus, Vocabulary};
use crate::embeddings::EmbeddingTable;
use crate::grad::{AdamState, Gradients, Graph, Mode};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Dialogues per Adam step.
    pub batch_size: usize,
    /// Global gradient-norm clipping threshold.
    pub clip_norm: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { epochs: 12, batch_size: 32, clip_norm: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_turn_accuracy: f64,
    pub dev_dialogue_accuracy: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept (0 if none improved on nothing).
    pub best_epoch: usize,
    pub best_dev_turn_accuracy: f64,
}

/// Epoch-at-a-time training over a fixed set of dialogues.
pub struct Trainer<'a> {
    model: HcnModel,
    adam: AdamState,
    train: &'a [Dialogue],
    table: &'a EmbeddingTable,
    vocab: &'a Vocabulary,
    opts: TrainOptions,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: &ModelConfig,
        train: &'a [Dialogue],
        num_actions: usize,
        table: &'a EmbeddingTable,
        vocab: &'a Vocabulary,
        opts: TrainOptions,
    ) -> Result<Self, DmError> {
        if opts.batch_size == 0 || !(opts.clip_norm > 0.0) {
            return Err(DmError::Config(format!("invalid training options {opts:?}")));
        }
        if train.is_empty() {
            return Err(DmError::Usage("no training dialogues".into()));
        }
        let dims = ModelDims { embedding_dim: table.dim(), vocab_size: vocab.len(), num_actions };
        let model = HcnModel::new(config, dims)?;
        let adam = AdamState::new(config.adam(), model.params())?;
        Ok(Trainer { model, adam, train, table, vocab, opts, epoch: 0 })
    }

    pub fn model(&self) -> &HcnModel {
        &self.model
    }

    pub fn into_model(self) -> HcnModel {
        self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One pass over the training dialogues in a seed-determined order.
    /// Returns the mean dialogue loss.
    pub fn train_epoch(&mut self) -> Result<f64, DmError> {
        self.epoch += 1;
        let seed = self.model.config().seed;
        let epoch = self.epoch as u64;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch])));

        let (mut loss_sum, mut counted) = (0.0, 0usize);
        for batch in order.chunks(self.opts.batch_size) {
            let mut grads = Gradients::zeros_like(self.model.params());
            let mut n = 0usize;
            for &i in batch {
                let mut g = Graph::new(self.model.params(), Mode::Train, derive_seed(&[seed, epoch, i as u64]));
                let Some(loss) = self.model.dialogue_loss(&mut g, &self.train[i], self.table, self.vocab)? else {
                    continue;
                };
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(DmError::Diverged { epoch: self.epoch, message: format!("loss {value} on dialogue {i}") });
                }
                grads.accumulate(&g.backward(loss).map_err(|e| DmError::Diverged {
                    epoch: self.epoch,
                    message: e.to_string(),
                })?);
                loss_sum += value;
                n += 1;
            }
            if n == 0 {
                continue;
            }
            counted += n;
            grads.scale(1.0 / n as f64);
            grads.clip_global_norm(self.opts.clip_norm);
            self.adam.step(self.model.params_mut(), &grads);
            self.model.params_mut().round_to_f32();
        }
        if counted == 0 {
            return Err(DmError::Usage("no labeled turns in the training dialogues".into()));
        }
        Ok(loss_sum / counted as f64)
    }
}

/// Trains for `opts.epochs` epochs, scoring dev turn accuracy after each, and
/// returns the model holding the best epoch's weights (earliest on ties).
/// Falls back to the training split for selection when dev is empty.
pub fn train_model(
    config: &ModelConfig,
    corpus: &PreparedCorpus,
    table: &EmbeddingTable,
    opts: &TrainOptions,
) -> Result<(HcnModel, TrainReport), DmError> {
    let mut trainer = Trainer::new(config, &corpus.train, corpus.actions.len(), table, &corpus.vocab, opts.clone())?;
    let selection: &[Dialogue] = if corpus.dev.is_empty() {
        log::warn!("dev split is empty; selecting the best epoch on the training split");
        &corpus.train
    } else {
        &corpus.dev
    };
    let mut report = TrainReport::default();
    let mut best = None;
    for _ in 0..opts.epochs {
        let started = Instant::now();
        let loss = trainer.train_epoch()?;
        let ev = evaluate(trainer.model(), selection, table, &corpus.vocab)?;
        let stats = EpochStats {
            epoch: trainer.epochs_done(),
            train_loss: loss,
            dev_turn_accuracy: ev.turn_accuracy,
            dev_dialogue_accuracy: ev.dialogue_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {}: loss {:.4}, dev turn acc {:.4}, dev dialogue acc {:.4} ({:.1}s)",
            stats.epoch,
            stats.train_loss,
            stats.dev_turn_accuracy,
            stats.dev_dialogue_accuracy,
            stats.seconds
        );
        if best.is_none() || ev.turn_accuracy > report.best_dev_turn_accuracy {
            report.best_epoch = stats.epoch;
            report.best_dev_turn_accuracy = ev.turn_accuracy;
            best = Some(trainer.model().params().clone());
        }
        report.epochs.push(stats);
    }
    let mut model = trainer.into_model();
    if let Some(params) = best {
        *model.params_mut() = params;
    }
    Ok((model, report))
}
