use std::collections::{BTreeSet, HashMap};

use super::babi::Dialogue;
use super::tokenize::{SILENCE_TOKEN, UNKNOWN_TOKEN};
use super::{fingerprint, DataError};

/// User-side vocabulary: sorted corpus tokens followed by the OOV sentinel
/// and the silence token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let regular: BTreeSet<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| t != UNKNOWN_TOKEN && t != SILENCE_TOKEN)
            .collect();
        let mut list: Vec<String> = regular.into_iter().collect();
        list.push(UNKNOWN_TOKEN.to_string());
        list.push(SILENCE_TOKEN.to_string());
        let index = list.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens: list, index }
    }

    /// Built from user utterances only; pass the training split.
    pub fn build(train: &[Dialogue]) -> Self {
        Self::from_tokens(train.iter().flat_map(|d| &d.turns).flat_map(|t| t.user_tokens.iter().cloned()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn unknown_index(&self) -> usize {
        self.index[UNKNOWN_TOKEN]
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or of the OOV sentinel.
    pub fn index_of(&self, token: &str) -> usize {
        self.get(token).unwrap_or_else(|| self.unknown_index())
    }

    /// Binary presence vector over the vocabulary.
    pub fn bow_vector(&self, tokens: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        for t in tokens {
            v[self.index_of(t)] = 1.0;
        }
        v
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let vocab = Self::from_tokens(text.lines().filter(|l| !l.is_empty()));
        if vocab.to_text() != text {
            return Err(DataError::Format("vocabulary file is not in canonical order".into()));
        }
        Ok(vocab)
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn bow_presence_semantics() {
        let vocab = Vocabulary::from_tokens(["a", "b", "c"]);
        assert_eq!(vocab.tokens(), &["a", "b", "c", UNKNOWN_TOKEN, SILENCE_TOKEN]);
        assert_eq!(vocab.bow_vector(&toks("a c c")), vec![1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(vocab.bow_vector(&[]), vec![0.0; 5]);
        assert_eq!(vocab.bow_vector(&toks("x y")), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(vocab.bow_vector(&[SILENCE_TOKEN.to_string()]), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn build_is_deterministic_and_text_round_trips() {
        let a = Vocabulary::from_tokens(["z", "a", "m", "a"]);
        let b = Vocabulary::from_tokens(["m", "z", "a"]);
        assert_eq!(a, b);
        assert_eq!(Vocabulary::from_text(&a.to_text()).unwrap(), a);
        assert!(Vocabulary::from_text("b\na\n<unk>\n<silence>\n").is_err());
    }
}
