use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::babi::Dialogue;
use super::delex::{dialogue_templates, Delexicalizer};
use super::{fingerprint, DataError};

/// Index into an [`ActionSet`], or [`ActionId::UNKNOWN`] for a template that
/// the training split never produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

impl ActionId {
    /// Reserved id for templates outside the action set. Never predicted, so
    /// it always scores as a miss.
    pub const UNKNOWN: ActionId = ActionId(usize::MAX);

    pub fn is_known(self) -> bool {
        self != ActionId::UNKNOWN
    }

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_known() {
            write!(f, "{}", self.0)
        } else {
            f.write_str("UNKNOWN")
        }
    }
}

/// Frozen, lexicographically sorted catalog of action templates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionSet {
    templates: Vec<String>,
    index: HashMap<String, ActionId>,
}

impl ActionSet {
    pub fn from_templates<I, S>(templates: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let unique: BTreeSet<String> = templates.into_iter().map(Into::into).collect();
        if unique.is_empty() {
            return Err(DataError::EmptyCorpus("no system utterances to build actions from".into()));
        }
        let templates: Vec<String> = unique.into_iter().collect();
        let index = templates.iter().enumerate().map(|(i, t)| (t.clone(), ActionId(i))).collect();
        Ok(ActionSet { templates, index })
    }

    /// Delexicalizes every system turn of `dialogues` and collects the
    /// distinct templates.
    pub fn build(dialogues: &[Dialogue], delex: &Delexicalizer) -> Result<Self, DataError> {
        Self::from_templates(dialogues.iter().flat_map(|d| dialogue_templates(delex, d)))
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn id(&self, template: &str) -> ActionId {
        self.index.get(template).copied().unwrap_or(ActionId::UNKNOWN)
    }

    pub fn template(&self, id: ActionId) -> Option<&str> {
        self.templates.get(id.0).map(String::as_str)
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    /// One template per line, in id order.
    pub fn to_text(&self) -> String {
        self.templates.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let lines: Vec<&str> = text.lines().collect();
        let set = Self::from_templates(lines.iter().copied())?;
        if set.templates.iter().map(String::as_str).ne(lines.iter().copied()) {
            return Err(DataError::Format("templates file is not sorted and unique".into()));
        }
        Ok(set)
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::babi::parse_str;

    #[test]
    fn repeated_line_gives_singleton() {
        let ds = parse_str("1 hi\tyou are welcome\n2 bye\tyou are welcome\n\n1 x\tyou are welcome\n").unwrap();
        let set = ActionSet::build(&ds, &Delexicalizer::default()).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.id("you are welcome"), ActionId(0));
    }

    #[test]
    fn ids_round_trip_and_order_is_sorted() {
        let set = ActionSet::from_templates(["b", "a", "c", "a"]).unwrap();
        assert_eq!(set.templates(), &["a", "b", "c"]);
        for i in 0..set.len() {
            let t = set.template(ActionId(i)).unwrap();
            assert_eq!(set.id(t), ActionId(i));
        }
        assert_eq!(set.id("zzz"), ActionId::UNKNOWN);
        assert_eq!(set.template(ActionId::UNKNOWN), None);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(ActionSet::build(&[], &Delexicalizer::default()), Err(DataError::EmptyCorpus(_))));
    }

    #[test]
    fn text_round_trip() {
        let set = ActionSet::from_templates(["x <name>", "api_call <cuisine> <location> <price>"]).unwrap();
        assert_eq!(ActionSet::from_text(&set.to_text()).unwrap(), set);
        assert!(ActionSet::from_text("b\na\n").is_err());
    }
}
