#![allow(dead_code)]

use hcn::data::PreparedCorpus;
use hcn::dm::{train_model, Checkpoint, CheckpointMetrics, TrainOptions};
use hcn::testkit::fixtures::{random_table, shipped_config, synthetic_corpus};

/// A briefly trained checkpoint on a small synthetic corpus.
pub fn checkpoint(config: &str) -> (PreparedCorpus, Checkpoint) {
    let corpus = synthetic_corpus(30, 6, 25);
    let table = random_table(&corpus, 24, 3);
    let opts = TrainOptions { epochs: 4, ..TrainOptions::default() };
    let (model, report) = train_model(&shipped_config(config), &corpus, &table, &opts).unwrap();
    let metrics = CheckpointMetrics {
        best_dev_turn_accuracy: report.best_dev_turn_accuracy,
        best_epoch: report.best_epoch,
        epochs_trained: 4,
    };
    let ck = Checkpoint::new(model, &corpus, table, metrics);
    (corpus, ck)
}
