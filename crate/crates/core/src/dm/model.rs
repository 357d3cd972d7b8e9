use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DmError, ModelConfig};
use crate::data::{ActionId, Dialogue, Vocabulary};
use crate::embeddings::EmbeddingTable;
use crate::encoders::{Encoder, LstmParams};
use crate::grad::{masked_softmax, Graph, Mode, NodeId, ParamId, ParamStore, Tensor};
use crate::init::glorot;

/// Sizes fixed by the corpus and the embedding table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub embedding_dim: usize,
    pub vocab_size: usize,
    pub num_actions: usize,
}

/// Permitted actions for one turn; at least one entry is true.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionMask(Vec<bool>);

impl ActionMask {
    pub fn new(permitted: Vec<bool>) -> Result<Self, DmError> {
        if !permitted.iter().any(|&p| p) {
            return Err(DmError::Usage("action mask permits no action".into()));
        }
        Ok(ActionMask(permitted))
    }

    pub fn all(k: usize) -> Self {
        ActionMask(vec![true; k])
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }
}

/// Recurrent state carried between the turns of one dialogue.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogueState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub prev_action: Option<ActionId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurnOutput {
    /// Distribution over the action catalog after masking.
    pub probs: Vec<f64>,
    pub action: ActionId,
    pub state: DialogueState,
}

#[derive(Clone, Debug)]
pub struct HcnModel {
    config: ModelConfig,
    dims: ModelDims,
    params: ParamStore,
    encoder: Encoder,
    lstm: LstmParams,
    fc: (ParamId, ParamId),
    out: (ParamId, ParamId),
}

impl HcnModel {
    /// Fresh model initialized from `config.seed`. Parameters live on the
    /// `f32` grid so checkpoints round-trip exactly.
    pub fn new(config: &ModelConfig, dims: ModelDims) -> Result<Self, DmError> {
        config.validate()?;
        if dims.embedding_dim == 0 || dims.num_actions == 0 {
            return Err(DmError::Config(format!("degenerate model dimensions {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&config.featurizer, dims.embedding_dim, dims.vocab_size, &mut params, &mut rng)?;
        let input = encoder.output_dim() + if config.prev_action_feature { dims.num_actions } else { 0 };
        let h = config.lstm_size;
        let k = dims.num_actions;
        let lstm = LstmParams::new(&mut params, "dialogue.lstm", input, h, &mut rng);
        let fc = (
            params.add("fc.w", glorot(vec![h, h], h, h, &mut rng)),
            params.add("fc.b", Tensor::zeros(&[h])),
        );
        let out = (
            params.add("out.w", glorot(vec![h, k], h, k, &mut rng)),
            params.add("out.b", Tensor::zeros(&[k])),
        );
        params.round_to_f32();
        Ok(HcnModel { config: config.clone(), dims, params, encoder, lstm, fc, out })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encoder_output_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn initial_state(&self) -> DialogueState {
        let h = self.config.lstm_size;
        DialogueState { h: vec![0.0; h], c: vec![0.0; h], prev_action: None }
    }

    fn check_inputs(&self, table: &EmbeddingTable, vocab: &Vocabulary) -> Result<(), DmError> {
        if table.dim() != self.dims.embedding_dim || vocab.len() != self.dims.vocab_size {
            return Err(DmError::Config(format!(
                "model expects embedding dim {} and vocabulary {}, got {} and {}",
                self.dims.embedding_dim,
                self.dims.vocab_size,
                table.dim(),
                vocab.len()
            )));
        }
        Ok(())
    }

    /// One turn on the graph: returns (logits, next LSTM state).
    pub(crate) fn turn(
        &self,
        g: &mut Graph,
        tokens: &[String],
        state: NodeId,
        prev_action: Option<ActionId>,
        table: &EmbeddingTable,
        vocab: &Vocabulary,
    ) -> Result<(NodeId, NodeId), DmError> {
        let mut x = self.encoder.encode(g, tokens, table, vocab)?;
        if self.config.prev_action_feature {
            let mut onehot = vec![0.0; self.dims.num_actions];
            if let Some(a) = prev_action.filter(|a| a.is_known()) {
                onehot[a.index()] = 1.0;
            }
            let p = g.constant(Tensor::vector(onehot))?;
            x = g.concat(&[x, p])?;
        }
        let next = self.lstm.step(g, x, state)?;
        let h = g.lstm_hidden(next)?;
        let h = g.dropout(h, self.config.lstm_keep)?;
        let (fw, fb) = (g.param(self.fc.0), g.param(self.fc.1));
        let z = g.matmul(h, fw)?;
        let z = g.add_bias(z, fb)?;
        let z = g.activation(self.config.activation, z)?;
        let z = g.dropout(z, self.config.fc_keep)?;
        let (ow, ob) = (g.param(self.out.0), g.param(self.out.1));
        let logits = g.matmul(z, ow)?;
        let logits = g.add_bias(logits, ob)?;
        Ok((logits, next))
    }

    /// Eval-mode step used by evaluation, the REPL and the HTTP service.
    pub fn forward_turn(
        &self,
        tokens: &[String],
        state: &DialogueState,
        mask: Option<&ActionMask>,
        table: &EmbeddingTable,
        vocab: &Vocabulary,
    ) -> Result<TurnOutput, DmError> {
        self.check_inputs(table, vocab)?;
        let k = self.dims.num_actions;
        if let Some(m) = mask {
            if m.as_slice().len() != k {
                return Err(DmError::Usage(format!("mask has {} entries for {k} actions", m.as_slice().len())));
            }
        }
        let h = self.config.lstm_size;
        if state.h.len() != h || state.c.len() != h {
            return Err(DmError::Usage("dialogue state does not match the model's LSTM size".into()));
        }
        let mut g = Graph::new(&self.params, Mode::Eval, 0);
        let mut packed = state.h.clone();
        packed.extend_from_slice(&state.c);
        let s = g.constant(Tensor::new(vec![2, h], packed)?)?;
        let (logits, next) = self.turn(&mut g, tokens, s, state.prev_action, table, vocab)?;
        let probs = masked_softmax(g.value(logits).data(), mask.map(ActionMask::as_slice))?;
        let action = ActionId(argmax(&probs, mask));
        let nv = g.value(next).data();
        Ok(TurnOutput {
            probs,
            action,
            state: DialogueState { h: nv[..h].to_vec(), c: nv[h..].to_vec(), prev_action: Some(action) },
        })
    }

    /// Mean cross-entropy over the known-gold turns of one unrolled dialogue,
    /// with gold previous actions as context. `None` when no turn is labeled.
    pub(crate) fn dialogue_loss(
        &self,
        g: &mut Graph,
        dialogue: &Dialogue,
        table: &EmbeddingTable,
        vocab: &Vocabulary,
    ) -> Result<Option<NodeId>, DmError> {
        self.check_inputs(table, vocab)?;
        let mut state = self.lstm.zero_state(g)?;
        let mut prev = None;
        let mut losses = Vec::with_capacity(dialogue.turns.len());
        for turn in &dialogue.turns {
            let (logits, next) = self.turn(g, &turn.user_tokens, state, prev, table, vocab)?;
            if turn.gold_action.is_known() {
                losses.push(g.softmax_xent(logits, turn.gold_action.index(), None)?);
            }
            state = next;
            prev = Some(turn.gold_action);
        }
        if losses.is_empty() {
            return Ok(None);
        }
        Ok(Some(g.mean(&losses)?))
    }
}

/// First index of the largest permitted probability.
fn argmax(probs: &[f64], mask: Option<&ActionMask>) -> usize {
    let mut best = None;
    for (i, &p) in probs.iter().enumerate() {
        if mask.is_some_and(|m| !m.as_slice()[i]) {
            continue;
        }
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((i, p));
        }
    }
    best.map(|(i, _)| i).expect("mask permits at least one action")
}
