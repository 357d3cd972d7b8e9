//! Command-line pipeline and HTTP service for HCN dialogue managers.

pub mod server;
pub mod session;

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use hcn::data::{PreparedCorpus, Split};
use hcn::dm::{evaluate, train_model, Checkpoint, CheckpointMetrics, ModelConfig, TrainOptions};
use hcn::embeddings::{train_subword_skipgram, training_sentences, EmbeddingTable, SkipGramConfig};
use hcn::hpo::{dialogue_objective, run_search, SearchOptions, SearchSpace, Strategy};

use session::Engine;

#[derive(Debug, Parser)]
#[command(name = "hcn", version, about = "Hybrid Code Network dialogue managers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse bAbI dialog files, build templates and vocabulary, and write a
    /// prepared-corpus directory.
    PrepareData {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train subword skip-gram vectors on the prepared training split.
    TrainEmbeddings {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 300)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a dialogue manager and save the best-dev-epoch checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 12)]
        epochs: usize,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print turn and dialogue accuracy of a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Hyperparameter search scored by best dev turn accuracy.
    Hpo {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 30)]
        trials: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long)]
        history: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Random search instead of GP expected improvement.
        #[arg(long)]
        random: bool,
    },
    /// Terminal conversation with a checkpoint, one user turn per line.
    Chat {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// HTTP inference service.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory of web client assets served under `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Seconds of inactivity after which a session is dropped.
        #[arg(long, default_value_t = 1800)]
        idle_timeout: u64,
    },
}

/// Error kind and message, printed by the binary as one JSON line.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

fn dm_kind(e: &hcn::dm::DmError) -> &'static str {
    use hcn::dm::DmError::*;
    match e {
        Grad(_) => "numeric",
        Data(_) => "data",
        Embedding(_) => "embeddings",
        Config(_) => "config",
        Usage(_) => "usage",
        Compatibility(_) => "compatibility",
        Format(_) => "format",
        Diverged { .. } => "diverged",
        Io { .. } => "io",
    }
}

impl From<hcn::dm::DmError> for CliError {
    fn from(e: hcn::dm::DmError) -> Self {
        CliError { kind: dm_kind(&e), message: e.to_string() }
    }
}

macro_rules! error_kind {
    ($($t:ty => $kind:literal),* $(,)?) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError { kind: $kind, message: e.to_string() }
            }
        }
    )*};
}

error_kind! {
    hcn::data::DataError => "data",
    hcn::embeddings::EmbeddingError => "embeddings",
    hcn::hpo::HpoError => "hpo",
    std::io::Error => "io",
}

fn load_table(path: &Path) -> Result<EmbeddingTable, CliError> {
    let t = EmbeddingTable::load(path)?;
    log::info!("loaded {} vectors of dim {} from {}", t.len(), t.dim(), path.display());
    Ok(t)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::PrepareData { train, dev, test, out: dir } => {
            let corpus = PreparedCorpus::prepare(&train, &dev, &test)?;
            corpus.write(&dir)?;
            write!(out, "{}", corpus.counts_text())?;
        }
        Command::TrainEmbeddings { corpus, epochs, dim, seed, out: file } => {
            let corpus = PreparedCorpus::load(&corpus)?;
            let cfg = SkipGramConfig { dim, epochs, seed, ..SkipGramConfig::default() };
            let (table, report) = train_subword_skipgram(&training_sentences(&corpus.train), &cfg)?;
            table.save(&file)?;
            let last = report.epoch_losses.last().copied().unwrap_or(f64::NAN);
            writeln!(out, "words\t{}\nngrams\t{}\nfinal_loss\t{last:.6}", table.len(), table.ngram_count())?;
        }
        Command::Train { config, data, embeddings, epochs, seed, out: dir } => {
            let mut cfg = ModelConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let corpus = PreparedCorpus::load(&data)?;
            let table = load_table(&embeddings)?;
            let opts = TrainOptions { epochs, ..TrainOptions::default() };
            let (model, report) = train_model(&cfg, &corpus, &table, &opts)?;
            for e in &report.epochs {
                writeln!(
                    out,
                    "epoch {}\tloss {:.4}\tdev_turn_accuracy {:.4}\tdev_dialogue_accuracy {:.4}",
                    e.epoch, e.train_loss, e.dev_turn_accuracy, e.dev_dialogue_accuracy
                )?;
            }
            let metrics = CheckpointMetrics {
                best_dev_turn_accuracy: report.best_dev_turn_accuracy,
                best_epoch: report.best_epoch,
                epochs_trained: report.epochs.len(),
            };
            let ck = Checkpoint::new(model, &corpus, table, metrics);
            ck.save(&dir)?;
            writeln!(out, "best_epoch\t{}\ncheckpoint\t{}", report.best_epoch, ck.fingerprint())?;
        }
        Command::Evaluate { checkpoint, data, split } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let corpus = PreparedCorpus::load(&data)?;
            ck.check_compatible(&corpus)?;
            let ev = evaluate(&ck.model, corpus.split(split.into()), &ck.embeddings, &ck.vocab)?;
            writeln!(out, "turn_accuracy: {:.4}\ndialogue_accuracy: {:.4}", ev.turn_accuracy, ev.dialogue_accuracy)?;
        }
        Command::Hpo { space, data, embeddings, trials, epochs, history, seed, random } => {
            let space = SearchSpace::load(&space)?;
            let corpus = PreparedCorpus::load(&data)?;
            let table = load_table(&embeddings)?;
            let opts = SearchOptions {
                budget: trials,
                seed,
                strategy: if random { Strategy::Random } else { Strategy::Bayesian },
                history: Some(history),
            };
            let outcome = run_search(&space, &opts, dialogue_objective(&space, &corpus, &table, epochs))?;
            let best = &outcome.best;
            writeln!(out, "best_trial\t{}\nbest_score\t{:.4}", best.index, best.score)?;
            if let Some(cfg) = &best.config {
                write!(out, "{}", cfg.to_toml_string())?;
            }
        }
        Command::Chat { checkpoint } => {
            let engine = Engine::new(Checkpoint::load(&checkpoint)?);
            chat(&engine, std::io::stdin().lock(), out)?;
        }
        Command::Serve { checkpoint, addr, static_dir, idle_timeout } => {
            let engine = Engine::new(Checkpoint::load(&checkpoint)?);
            let app = server::AppState::new(Some(engine), Duration::from_secs(idle_timeout));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(app, addr, static_dir))?;
        }
    }
    Ok(())
}

/// Read-eval-print loop: each input line is a user turn, each output line
/// `[action id] reply`.
pub fn chat(engine: &Engine, input: impl BufRead, out: &mut dyn Write) -> Result<(), CliError> {
    let mut session = engine.new_session();
    for line in input.lines() {
        let reply = engine.respond(&mut session, &line?)?;
        writeln!(out, "[{}] {}", reply.action_id, reply.reply)?;
        out.flush()?;
    }
    Ok(())
}
