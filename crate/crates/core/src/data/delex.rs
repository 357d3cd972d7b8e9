//! Entity abstraction for system utterances.
//!
//! Restaurant names, phone numbers and the like are replaced by typed
//! placeholders so that utterances differing only in entity values collapse
//! into one action template. Values are recognized from, in order: `R_*`
//! relation tokens, the dialogue's knowledge-base context, a corpus lexicon,
//! and the corpus' lexical shapes (`*_phone`, `*_address`, `*_post_code`,
//! underscore-joined restaurant identifiers).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::babi::{Dialogue, KbFact};
use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotType {
    Name,
    Phone,
    Address,
    Postcode,
    Cuisine,
    Location,
    Price,
    Rating,
}

impl SlotType {
    pub const ALL: [SlotType; 8] = [
        SlotType::Name,
        SlotType::Phone,
        SlotType::Address,
        SlotType::Postcode,
        SlotType::Cuisine,
        SlotType::Location,
        SlotType::Price,
        SlotType::Rating,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SlotType::Name => "name",
            SlotType::Phone => "phone",
            SlotType::Address => "address",
            SlotType::Postcode => "postcode",
            SlotType::Cuisine => "cuisine",
            SlotType::Location => "location",
            SlotType::Price => "price",
            SlotType::Rating => "rating",
        }
    }

    pub fn placeholder(self) -> String {
        format!("<{}>", self.as_str())
    }

    /// Maps KB relation names such as `R_cuisine` to slot types.
    pub fn from_relation(relation: &str) -> Option<SlotType> {
        match relation.strip_prefix("R_")? {
            "name" => Some(SlotType::Name),
            "phone" => Some(SlotType::Phone),
            "address" => Some(SlotType::Address),
            "post_code" => Some(SlotType::Postcode),
            "cuisine" => Some(SlotType::Cuisine),
            "location" => Some(SlotType::Location),
            "price" => Some(SlotType::Price),
            "rating" => Some(SlotType::Rating),
            _ => None,
        }
    }

    fn from_placeholder(token: &str) -> Option<SlotType> {
        let inner = token.strip_prefix('<')?.strip_suffix('>')?;
        inner.parse().ok()
    }
}

impl fmt::Display for SlotType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SlotType {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SlotType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| DataError::Format(format!("unknown slot type {s:?}")))
    }
}

/// Argument order of `api_call cuisine location price`.
const API_CALL_SLOTS: [SlotType; 3] = [SlotType::Cuisine, SlotType::Location, SlotType::Price];
const API_CALL: &str = "api_call";
const LOCATIONS: [&str; 5] = ["north", "south", "east", "west", "centre"];
const PRICES: [&str; 3] = ["cheap", "moderate", "expensive"];

/// Entity values known within one dialogue. Starts empty at every dialogue.
#[derive(Clone, Debug, Default)]
pub struct KbContext {
    values: HashMap<String, SlotType>,
}

impl KbContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe_fact(&mut self, fact: &KbFact) {
        self.values.insert(fact.entity.to_lowercase(), SlotType::Name);
        if let Some(slot) = SlotType::from_relation(&fact.relation) {
            self.values.insert(fact.value.to_lowercase(), slot);
        }
    }

    /// Records the positional arguments of an `api_call` utterance.
    pub fn observe_system(&mut self, utterance: &str) {
        for (value, slot) in api_call_arguments(utterance) {
            self.values.insert(value, slot);
        }
    }

    pub fn insert(&mut self, value: &str, slot: SlotType) {
        self.values.insert(value.to_lowercase(), slot);
    }

    pub fn get(&self, value: &str) -> Option<SlotType> {
        self.values.get(value).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn api_call_arguments(utterance: &str) -> Vec<(String, SlotType)> {
    let mut words = utterance.split_whitespace();
    if words.next() != Some(API_CALL) {
        return Vec::new();
    }
    words
        .zip(API_CALL_SLOTS)
        .filter(|(w, _)| !w.starts_with("R_"))
        .map(|(w, s)| (w.to_lowercase(), s))
        .collect()
}

/// Replaces entity values in system utterances with typed placeholders.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delexicalizer {
    lexicon: BTreeMap<String, SlotType>,
}

impl Default for Delexicalizer {
    fn default() -> Self {
        let mut lexicon = BTreeMap::new();
        for v in LOCATIONS {
            lexicon.insert(v.to_string(), SlotType::Location);
        }
        for v in PRICES {
            lexicon.insert(v.to_string(), SlotType::Price);
        }
        Delexicalizer { lexicon }
    }
}

impl Delexicalizer {
    /// Built-in area and price values extended with every restaurant name and
    /// non-rating KB value, plus `api_call` arguments, found in `dialogues`.
    pub fn from_dialogues(dialogues: &[Dialogue]) -> Self {
        let mut delex = Delexicalizer::default();
        for d in dialogues {
            for f in &d.kb_facts {
                delex.lexicon.entry(f.entity.to_lowercase()).or_insert(SlotType::Name);
                match SlotType::from_relation(&f.relation) {
                    Some(SlotType::Rating) | None => {}
                    Some(slot) => {
                        delex.lexicon.entry(f.value.to_lowercase()).or_insert(slot);
                    }
                }
            }
            for t in &d.turns {
                for (value, slot) in api_call_arguments(&t.raw_system) {
                    delex.lexicon.entry(value).or_insert(slot);
                }
            }
        }
        delex
    }

    pub fn from_lexicon(lexicon: BTreeMap<String, SlotType>) -> Self {
        Delexicalizer { lexicon }
    }

    pub fn lexicon(&self) -> &BTreeMap<String, SlotType> {
        &self.lexicon
    }

    /// Slot type of a lowercase value according to the lexicon only.
    pub fn lexicon_slot(&self, value: &str) -> Option<SlotType> {
        self.lexicon.get(value).copied()
    }

    /// `value<TAB>type` lines sorted by value.
    pub fn lexicon_to_string(&self) -> String {
        self.lexicon.iter().map(|(v, s)| format!("{v}\t{s}\n")).collect()
    }

    pub fn lexicon_from_str(text: &str) -> Result<Self, DataError> {
        let mut lexicon = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (v, s) = line.split_once('\t').ok_or_else(|| DataError::Parse {
                line: i + 1,
                message: "expected `value<TAB>type`".into(),
            })?;
            lexicon.insert(v.to_string(), s.parse()?);
        }
        Ok(Delexicalizer { lexicon })
    }

    pub fn delexicalize(&self, utterance: &str, context: &KbContext) -> String {
        utterance
            .split(' ')
            .map(|token| self.delexicalize_token(token, context))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn delexicalize_token(&self, token: &str, context: &KbContext) -> String {
        let core = token.trim_matches(is_sentence_punct);
        if core.is_empty() || SlotType::from_placeholder(core).is_some() {
            return token.to_string();
        }
        match self.classify(core, context) {
            Some(slot) => {
                let start = token.find(core).expect("core is a substring");
                format!("{}{}{}", &token[..start], slot.placeholder(), &token[start + core.len()..])
            }
            None => token.to_string(),
        }
    }

    fn classify(&self, core: &str, context: &KbContext) -> Option<SlotType> {
        if let Some(slot) = SlotType::from_relation(core) {
            return Some(slot);
        }
        let lower = core.to_lowercase();
        context.get(&lower).or_else(|| self.lexicon_slot(&lower)).or_else(|| shape_slot(&lower))
    }
}

fn is_sentence_punct(c: char) -> bool {
    matches!(c, '.' | ',' | '!' | '?' | ';' | ':' | '"' | '(' | ')')
}

/// Corpus-specific value shapes.
fn shape_slot(lower: &str) -> Option<SlotType> {
    if lower == API_CALL || !lower.contains('_') {
        return None;
    }
    if !lower.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '\'' || c == '-' || c == '&') {
        return None;
    }
    if lower.ends_with("_phone") {
        Some(SlotType::Phone)
    } else if lower.ends_with("_address") {
        Some(SlotType::Address)
    } else if lower.ends_with("_post_code") {
        Some(SlotType::Postcode)
    } else {
        Some(SlotType::Name)
    }
}

/// Convenience form using only the built-in lexicon and `kb_facts`.
pub fn delexicalize(utterance: &str, kb_facts: &[KbFact]) -> String {
    let mut context = KbContext::new();
    for f in kb_facts {
        context.observe_fact(f);
    }
    context.observe_system(utterance);
    Delexicalizer::default().delexicalize(utterance, &context)
}

/// Delexicalizes every system turn of a dialogue, feeding KB facts and
/// `api_call` arguments into a fresh per-dialogue context as they appear.
pub fn dialogue_templates(delex: &Delexicalizer, dialogue: &Dialogue) -> Vec<String> {
    let mut context = KbContext::new();
    dialogue
        .turns
        .iter()
        .enumerate()
        .map(|(i, turn)| {
            for f in dialogue.facts_before(i) {
                context.observe_fact(f);
            }
            context.observe_system(&turn.raw_system);
            delex.delexicalize(&turn.raw_system, &context)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::babi::parse_str;

    fn fact(e: &str, r: &str, v: &str) -> KbFact {
        KbFact { entity: e.into(), relation: r.into(), value: v.into(), position: 0 }
    }

    #[test]
    fn restaurant_identifier_becomes_name() {
        let out = delexicalize("the_golden_curry is a nice restaurant", &[]);
        assert_eq!(out, "<name> is a nice restaurant");
        let out = delexicalize("Sure, the_golden_curry is on the_golden_curry_address.", &[]);
        assert_eq!(out, "Sure, <name> is on <address>.");
        let out = delexicalize("The phone number of x_y is x_y_phone", &[]);
        assert_eq!(out, "The phone number of <name> is <phone>");
    }

    #[test]
    fn kb_values_use_their_relation() {
        let facts = [fact("prezzo", "R_cuisine", "italian"), fact("prezzo", "R_rating", "7")];
        let out = delexicalize("prezzo serves italian food and is rated 7", &facts);
        assert_eq!(out, "<name> serves <cuisine> food and is rated <rating>");
    }

    #[test]
    fn api_call_arguments_are_typed_by_position() {
        assert_eq!(delexicalize("api_call R_cuisine west moderate", &[]), "api_call <cuisine> <location> <price>");
        assert_eq!(delexicalize("api_call basque north R_price", &[]), "api_call <cuisine> <location> <price>");
    }

    #[test]
    fn plain_utterance_is_unchanged() {
        let s = "What kind of food would you like?";
        assert_eq!(delexicalize(s, &[]), s);
        let s = "you are welcome";
        assert_eq!(delexicalize(s, &[]), s);
    }

    #[test]
    fn delexicalization_is_idempotent() {
        let facts = [fact("prezzo", "R_cuisine", "italian")];
        for s in [
            "prezzo is a nice restaurant in the west of town serving italian food",
            "Would you like something in the cheap, moderate, or expensive price range?",
            "Sure, the_nirala is on the_nirala_address.",
            "api_call R_cuisine west moderate",
        ] {
            let once = delexicalize(s, &facts);
            let twice = delexicalize(&once, &facts);
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn lexicon_round_trips_through_text() {
        let ds = parse_str("1 hi\tapi_call thai north cheap\n2 bangkok_city R_cuisine thai\n").unwrap();
        let delex = Delexicalizer::from_dialogues(&ds);
        assert_eq!(delex.lexicon_slot("thai"), Some(SlotType::Cuisine));
        assert_eq!(delex.lexicon_slot("bangkok_city"), Some(SlotType::Name));
        let back = Delexicalizer::lexicon_from_str(&delex.lexicon_to_string()).unwrap();
        assert_eq!(back, delex);
    }

    #[test]
    fn context_resets_per_dialogue() {
        let text = "1 hi\tapi_call korean north cheap\n2 x\tSorry there is no korean restaurant in the north of town\n\n1 hi\tkorean is not a cuisine here\n";
        let ds = parse_str(text).unwrap();
        let delex = Delexicalizer::default();
        assert_eq!(
            dialogue_templates(&delex, &ds[0])[1],
            "Sorry there is no <cuisine> restaurant in the <location> of town"
        );
        assert_eq!(dialogue_templates(&delex, &ds[1])[0], "korean is not a cuisine here");
    }
}
