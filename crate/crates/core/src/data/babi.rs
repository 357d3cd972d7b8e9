//! Reader and writer for the bAbI dialog text format.
//!
//! ```text
//! 1 <SILENCE>\tHello, welcome to the Cambridge restaurant system. ...
//! 2 cheap restaurant in the north\tWhat kind of food would you like?
//! 3 any\tapi_call R_cuisine north cheap
//! 4 da_vinci_pizzeria R_phone da_vinci_pizzeria_phone
//! ```
//!
//! Lines are numbered from 1 within each dialogue and dialogues are separated
//! by a blank line. Turn lines hold the user and system utterances separated
//! by a tab; lines without a tab are knowledge-base results
//! (`entity relation value`).

use std::fmt::Write as _;
use std::path::Path;

use super::{ActionId, DataError};
use crate::data::tokenize::tokenize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KbFact {
    pub entity: String,
    pub relation: String,
    pub value: String,
    /// Number of turns that precede this fact in its dialogue.
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub raw_user: String,
    pub raw_system: String,
    pub user_tokens: Vec<String>,
    /// Gold system action; [`ActionId::UNKNOWN`] until the corpus is labeled.
    pub gold_action: ActionId,
}

impl Turn {
    pub fn new(raw_user: impl Into<String>, raw_system: impl Into<String>) -> Self {
        let raw_user = raw_user.into();
        let user_tokens = tokenize(&raw_user);
        Turn { raw_user, raw_system: raw_system.into(), user_tokens, gold_action: ActionId::UNKNOWN }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Dialogue {
    pub turns: Vec<Turn>,
    pub kb_facts: Vec<KbFact>,
}

impl Dialogue {
    /// Facts that appear before turn `index`, i.e. after turn `index - 1`.
    pub fn facts_before(&self, index: usize) -> impl Iterator<Item = &KbFact> {
        self.kb_facts.iter().filter(move |f| f.position == index)
    }
}

pub fn parse_split(path: &Path) -> Result<Vec<Dialogue>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<Vec<Dialogue>, DataError> {
    let mut dialogues = Vec::new();
    let mut current = Dialogue::default();
    let mut next_number = 1usize;
    let mut started_at = 0usize;

    let finish = |d: Dialogue, started_at: usize, out: &mut Vec<Dialogue>| -> Result<(), DataError> {
        if d.turns.is_empty() {
            return Err(DataError::Parse { line: started_at, message: "dialogue has no turns".into() });
        }
        out.push(d);
        Ok(())
    };

    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        let line = if line_no == 1 { line.trim_start_matches('\u{feff}') } else { line };
        if line.trim().is_empty() {
            if next_number > 1 {
                finish(std::mem::take(&mut current), started_at, &mut dialogues)?;
                next_number = 1;
            }
            continue;
        }
        if next_number == 1 {
            started_at = line_no;
        }
        let (number, rest) = line
            .split_once(' ')
            .ok_or_else(|| DataError::Parse { line: line_no, message: "missing line number".into() })?;
        let number: usize = number.parse().map_err(|_| DataError::Parse {
            line: line_no,
            message: format!("bad line number {number:?}"),
        })?;
        if number != next_number {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("expected line number {next_number}, found {number}"),
            });
        }
        next_number += 1;

        if let Some((user, system)) = rest.split_once('\t') {
            current.turns.push(Turn::new(user, system));
        } else {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            match parts.as_slice() {
                [entity, relation, value] => current.kb_facts.push(KbFact {
                    entity: (*entity).to_string(),
                    relation: (*relation).to_string(),
                    value: (*value).to_string(),
                    position: current.turns.len(),
                }),
                _ => {
                    return Err(DataError::Parse {
                        line: line_no,
                        message: "expected `user<TAB>system` or `entity relation value`".into(),
                    })
                }
            }
        }
    }
    if next_number > 1 {
        finish(current, started_at, &mut dialogues)?;
    }
    Ok(dialogues)
}

/// Writes dialogues back in the bAbI format, renumbering lines.
pub fn serialize(dialogues: &[Dialogue]) -> String {
    let mut out = String::new();
    for d in dialogues {
        let mut n = 1;
        let emit_facts = |out: &mut String, position: usize, n: &mut usize| {
            for f in d.kb_facts.iter().filter(|f| f.position == position) {
                let _ = writeln!(out, "{} {} {} {}", n, f.entity, f.relation, f.value);
                *n += 1;
            }
        };
        for (i, t) in d.turns.iter().enumerate() {
            emit_facts(&mut out, i, &mut n);
            let _ = writeln!(out, "{} {}\t{}", n, t.raw_user, t.raw_system);
            n += 1;
        }
        emit_facts(&mut out, d.turns.len(), &mut n);
        out.push('\n');
    }
    out
}

pub fn write_split(path: &Path, dialogues: &[Dialogue]) -> Result<(), DataError> {
    std::fs::write(path, serialize(dialogues)).map_err(|e| DataError::io(path, e))
}
