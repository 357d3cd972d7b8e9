//! Turn-by-turn inference over a loaded checkpoint, shared by `chat` and
//! `serve`.

use std::collections::BTreeMap;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use hcn::data::{tokenize, ActionId, SlotType, SILENCE_TOKEN};
use hcn::dm::{Checkpoint, DialogueState, DmError};
use serde::Serialize;

pub const TOP_K: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ranked {
    pub action_id: usize,
    pub template: String,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Reply {
    pub reply: String,
    pub action_id: usize,
    pub top_k: Vec<Ranked>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TranscriptEntry {
    pub user: String,
    pub action_id: usize,
    pub template: String,
    pub reply: String,
    /// Unix seconds.
    pub timestamp: f64,
}

/// One conversation: the dialogue state plus entity values the user has
/// mentioned, which fill template placeholders.
#[derive(Clone, Debug)]
pub struct Session {
    pub state: DialogueState,
    pub transcript: Vec<TranscriptEntry>,
    pub slots: BTreeMap<SlotType, String>,
    pub created: Instant,
    pub last_active: Instant,
}

/// Read-only inference engine.
pub struct Engine {
    pub checkpoint: Checkpoint,
    fingerprint: String,
}

impl Engine {
    pub fn new(checkpoint: Checkpoint) -> Self {
        let fingerprint = checkpoint.fingerprint();
        Engine { checkpoint, fingerprint }
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn new_session(&self) -> Session {
        let now = Instant::now();
        Session {
            state: self.checkpoint.model.initial_state(),
            transcript: Vec::new(),
            slots: BTreeMap::new(),
            created: now,
            last_active: now,
        }
    }

    /// Advances the session by one user utterance. Empty input is a silent
    /// turn.
    pub fn respond(&self, session: &mut Session, text: &str) -> Result<Reply, DmError> {
        let ck = &self.checkpoint;
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push(SILENCE_TOKEN.to_string());
        }
        for t in &tokens {
            if let Some(slot) = ck.delex.lexicon_slot(t) {
                session.slots.insert(slot, t.clone());
            }
        }
        let out = ck.model.forward_turn(&tokens, &session.state, None, &ck.embeddings, &ck.vocab)?;
        let template = self.template(out.action);
        let reply = fill(&template, &session.slots);

        let mut order: Vec<usize> = (0..out.probs.len()).collect();
        order.sort_by(|&a, &b| out.probs[b].total_cmp(&out.probs[a]).then(a.cmp(&b)));
        let top_k = order
            .into_iter()
            .take(TOP_K)
            .map(|i| Ranked { action_id: i, template: self.template(ActionId(i)), p: out.probs[i] })
            .collect();

        session.state = out.state;
        session.last_active = Instant::now();
        session.transcript.push(TranscriptEntry {
            user: text.to_string(),
            action_id: out.action.index(),
            template: template.clone(),
            reply: reply.clone(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
        });
        Ok(Reply { reply, action_id: out.action.index(), top_k })
    }

    fn template(&self, id: ActionId) -> String {
        self.checkpoint.actions.template(id).unwrap_or("<unknown action>").to_string()
    }
}

/// Substitutes known slot values; unknown placeholders stay visible.
pub fn fill(template: &str, slots: &BTreeMap<SlotType, String>) -> String {
    slots.iter().fold(template.to_string(), |s, (slot, value)| s.replace(&slot.placeholder(), value))
}
