//! The prepared-corpus directory.
//!
//! | file            | content                                             |
//! |-----------------|-----------------------------------------------------|
//! | `train.txt` etc.| splits re-serialized in the bAbI format             |
//! | `templates.txt` | action templates, one per line, in id order         |
//! | `vocab.txt`     | user vocabulary, one token per line                 |
//! | `lexicon.txt`   | `value<TAB>slot` entity lexicon used for labeling   |
//! | `counts.txt`    | `name<TAB>count` summary lines                      |
//!
//! All files are plain text and byte-for-byte deterministic for given inputs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::actions::ActionSet;
use super::babi::{parse_split, parse_str, serialize, Dialogue};
use super::delex::{dialogue_templates, Delexicalizer};
use super::vocab::Vocabulary;
use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    fn file_name(self) -> String {
        format!("{}.txt", self.name())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" | "trn" => Ok(Split::Train),
            "dev" | "val" | "valid" => Ok(Split::Dev),
            "test" | "tst" => Ok(Split::Test),
            other => Err(DataError::Format(format!("unknown split {other:?}"))),
        }
    }
}

/// Labeled splits plus the frozen vocabulary, action set and lexicon.
#[derive(Clone, Debug)]
pub struct PreparedCorpus {
    pub train: Vec<Dialogue>,
    pub dev: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
    pub vocab: Vocabulary,
    pub actions: ActionSet,
    pub delex: Delexicalizer,
}

impl PreparedCorpus {
    /// Builds vocabulary, lexicon and action set from `train` and labels all
    /// three splits. Dev/test templates missing from the training split map to
    /// [`ActionId::UNKNOWN`].
    pub fn from_splits(train: Vec<Dialogue>, dev: Vec<Dialogue>, test: Vec<Dialogue>) -> Result<Self, DataError> {
        if train.is_empty() {
            return Err(DataError::EmptyCorpus("training split has no dialogues".into()));
        }
        let delex = Delexicalizer::from_dialogues(&train);
        let actions = ActionSet::build(&train, &delex)?;
        let vocab = Vocabulary::build(&train);
        Ok(Self::assemble(train, dev, test, vocab, actions, delex))
    }

    fn assemble(
        mut train: Vec<Dialogue>,
        mut dev: Vec<Dialogue>,
        mut test: Vec<Dialogue>,
        vocab: Vocabulary,
        actions: ActionSet,
        delex: Delexicalizer,
    ) -> Self {
        for split in [&mut train, &mut dev, &mut test] {
            label(split, &delex, &actions);
        }
        PreparedCorpus { train, dev, test, vocab, actions, delex }
    }

    pub fn prepare(train: &Path, dev: &Path, test: &Path) -> Result<Self, DataError> {
        Self::from_splits(parse_split(train)?, parse_split(dev)?, parse_split(test)?)
    }

    pub fn split(&self, split: Split) -> &[Dialogue] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Number of turns labeled [`ActionId::UNKNOWN`] in a split.
    pub fn unknown_turns(&self, split: Split) -> usize {
        self.split(split).iter().flat_map(|d| &d.turns).filter(|t| !t.gold_action.is_known()).count()
    }

    pub fn counts_text(&self) -> String {
        let mut s = String::new();
        for split in Split::ALL {
            let ds = self.split(split);
            s += &format!("{}_dialogues\t{}\n", split, ds.len());
            s += &format!("{}_turns\t{}\n", split, ds.iter().map(|d| d.turns.len()).sum::<usize>());
        }
        s += &format!("templates\t{}\n", self.actions.len());
        s += &format!("vocabulary\t{}\n", self.vocab.len());
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        let put = |name: &str, content: String| {
            let p = dir.join(name);
            std::fs::write(&p, content).map_err(|e| DataError::io(&p, e))
        };
        for split in Split::ALL {
            put(&split.file_name(), serialize(self.split(split)))?;
        }
        put("templates.txt", self.actions.to_text())?;
        put("vocab.txt", self.vocab.to_text())?;
        put("lexicon.txt", self.delex.lexicon_to_string())?;
        put("counts.txt", self.counts_text())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| DataError::io(&p, e))
        };
        let splits = Split::ALL.map(|s| read(&s.file_name()).and_then(|t| parse_str(&t)));
        let [train, dev, test] = splits;
        let actions = ActionSet::from_text(&read("templates.txt")?)?;
        let vocab = Vocabulary::from_text(&read("vocab.txt")?)?;
        let delex = Delexicalizer::lexicon_from_str(&read("lexicon.txt")?)?;
        Ok(Self::assemble(train?, dev?, test?, vocab, actions, delex))
    }
}

fn label(dialogues: &mut [Dialogue], delex: &Delexicalizer, actions: &ActionSet) {
    for d in dialogues {
        let templates = dialogue_templates(delex, d);
        for (turn, template) in d.turns.iter_mut().zip(templates) {
            turn.gold_action = actions.id(&template);
        }
    }
}
