//! Utterance featurizers: averaged embedding plus bag-of-words, window CNN
//! with max-over-time pooling, and an LSTM over the word vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::embeddings::EmbeddingTable;
use crate::grad::{Activation, GradError, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::init::glorot;

pub const DEFAULT_WIDTHS: [usize; 3] = [3, 4, 5];

fn default_widths() -> Vec<usize> {
    DEFAULT_WIDTHS.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FeaturizerConfig {
    Baseline {},
    Cnn {
        filters: usize,
        conv_keep: f64,
        #[serde(default = "default_widths")]
        widths: Vec<usize>,
    },
    Rnn {
        input_lstm_size: usize,
        input_lstm_keep: f64,
        input_activation: Activation,
    },
}

impl FeaturizerConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            FeaturizerConfig::Baseline {} => "baseline",
            FeaturizerConfig::Cnn { .. } => "cnn",
            FeaturizerConfig::Rnn { .. } => "rnn",
        }
    }

    pub fn validate(&self) -> Result<(), GradError> {
        let bad = |m: String| Err(GradError::Config(m));
        match self {
            FeaturizerConfig::Baseline {} => Ok(()),
            FeaturizerConfig::Cnn { filters, conv_keep, widths } => {
                if *filters == 0 {
                    return bad("cnn filters must be at least 1".into());
                }
                if widths.is_empty() || widths.contains(&0) {
                    return bad(format!("invalid cnn widths {widths:?}"));
                }
                check_keep("conv_keep", *conv_keep)
            }
            FeaturizerConfig::Rnn { input_lstm_size, input_lstm_keep, .. } => {
                if *input_lstm_size == 0 {
                    return bad("input_lstm_size must be at least 1".into());
                }
                check_keep("input_lstm_keep", *input_lstm_keep)
            }
        }
    }
}

pub(crate) fn check_keep(name: &str, keep: f64) -> Result<(), GradError> {
    if keep > 0.0 && keep <= 1.0 {
        Ok(())
    } else {
        Err(GradError::Config(format!("{name} = {keep} is not a keep probability in (0, 1]")))
    }
}

/// Weights of one LSTM layer, gates ordered (i, f, g, o).
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmParams {
    /// Glorot weights, zero biases except the forget gate at 1.
    pub fn new(params: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w = params.add(format!("{prefix}.w"), glorot(vec![input, 4 * hidden], input, 4 * hidden, rng));
        let u = params.add(format!("{prefix}.u"), glorot(vec![hidden, 4 * hidden], hidden, 4 * hidden, rng));
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        let b = params.add(format!("{prefix}.b"), Tensor::vector(b));
        LstmParams { w, u, b, hidden }
    }

    pub fn zero_state(&self, g: &mut Graph) -> Result<NodeId, GradError> {
        g.constant(Tensor::zeros(&[2, self.hidden]))
    }

    pub fn step(&self, g: &mut Graph, x: NodeId, state: NodeId) -> Result<NodeId, GradError> {
        let (w, u, b) = (g.param(self.w), g.param(self.u), g.param(self.b));
        g.lstm_step(x, state, w, u, b)
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Baseline,
    Cnn { convs: Vec<(ParamId, ParamId)>, keep: f64 },
    Rnn { lstm: LstmParams, keep: f64, activation: Activation },
}

/// A featurizer bound to its parameters in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Encoder {
    kind: Kind,
    emb_dim: usize,
    out_dim: usize,
}

impl Encoder {
    /// Registers this featurizer's parameters (none for the baseline).
    pub fn new(
        cfg: &FeaturizerConfig,
        emb_dim: usize,
        vocab_len: usize,
        params: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self, GradError> {
        cfg.validate()?;
        let (kind, out_dim) = match cfg {
            FeaturizerConfig::Baseline {} => (Kind::Baseline, emb_dim + vocab_len),
            FeaturizerConfig::Cnn { filters, conv_keep, widths } => {
                let convs = widths
                    .iter()
                    .map(|&w| {
                        let f = params.add(
                            format!("encoder.cnn.w{w}.filters"),
                            glorot(vec![w, emb_dim, *filters], w * emb_dim, *filters, rng),
                        );
                        let b = params.add(format!("encoder.cnn.w{w}.bias"), Tensor::zeros(&[*filters]));
                        (f, b)
                    })
                    .collect();
                (Kind::Cnn { convs, keep: *conv_keep }, widths.len() * filters)
            }
            FeaturizerConfig::Rnn { input_lstm_size, input_lstm_keep, input_activation } => {
                let lstm = LstmParams::new(params, "encoder.rnn", emb_dim, *input_lstm_size, rng);
                (Kind::Rnn { lstm, keep: *input_lstm_keep, activation: *input_activation }, *input_lstm_size)
            }
        };
        Ok(Encoder { kind, emb_dim, out_dim })
    }

    pub fn output_dim(&self) -> usize {
        self.out_dim
    }

    /// Feature node for one tokenized utterance.
    pub fn encode(
        &self,
        g: &mut Graph,
        tokens: &[String],
        table: &EmbeddingTable,
        vocab: &Vocabulary,
    ) -> Result<NodeId, GradError> {
        if table.dim() != self.emb_dim {
            return Err(GradError::Config(format!(
                "embedding dimension {} does not match the model's {}",
                table.dim(),
                self.emb_dim
            )));
        }
        match &self.kind {
            Kind::Baseline => g.constant(Tensor::vector(baseline_features(tokens, table, vocab))),
            Kind::Cnn { convs, keep } => {
                let rows = tokens.len().max(1);
                let mut data = Vec::with_capacity(rows * self.emb_dim);
                for t in tokens {
                    data.extend(table.lookup(t));
                }
                data.resize(rows * self.emb_dim, 0.0);
                let seq = g.constant(Tensor::new(vec![rows, self.emb_dim], data)?)?;
                let mut pooled = Vec::with_capacity(convs.len());
                for &(f, b) in convs {
                    let (f, b) = (g.param(f), g.param(b));
                    pooled.push(g.conv1d_maxpool(seq, f, b, Activation::Relu)?);
                }
                let joined = g.concat(&pooled)?;
                g.dropout(joined, *keep)
            }
            Kind::Rnn { lstm, keep, activation } => {
                let mut state = lstm.zero_state(g)?;
                for t in tokens {
                    let x = g.constant(Tensor::vector(table.lookup(t)))?;
                    state = lstm.step(g, x, state)?;
                }
                let h = g.lstm_hidden(state)?;
                let a = g.activation(*activation, h)?;
                g.dropout(a, *keep)
            }
        }
    }
}

/// Mean token vector (zeros for an empty utterance) followed by the binary
/// bag-of-words vector.
pub fn baseline_features(tokens: &[String], table: &EmbeddingTable, vocab: &Vocabulary) -> Vec<f64> {
    let mut mean = vec![0.0; table.dim()];
    for t in tokens {
        for (m, x) in mean.iter_mut().zip(table.lookup(t)) {
            *m += x;
        }
    }
    if !tokens.is_empty() {
        let n = tokens.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
    }
    mean.extend(vocab.bow_vector(tokens));
    mean
}
