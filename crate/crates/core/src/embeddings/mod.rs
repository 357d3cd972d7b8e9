//! Fixed word vectors for the utterance encoders.
//!
//! Tables are read from and written to the common text format: an optional
//! `count dim` header followed by one `token v1 .. vdim` row per line. Tables
//! produced by [`train_subword_skipgram`] also carry character n-gram rows,
//! written with an `#ng#` token prefix, so out-of-vocabulary words can be
//! composed at lookup time.

mod skipgram;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use skipgram::{train_subword_skipgram, training_sentences, SkipGramConfig, SkipGramReport};

pub const NGRAM_PREFIX: &str = "#ng#";
pub const MIN_NGRAM: usize = 3;
pub const MAX_NGRAM: usize = 6;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("configuration error: {0}")]
    Config(String),
}

/// Character n-grams of `<token>` with lengths `MIN_NGRAM..=MAX_NGRAM`,
/// deduplicated in order of first occurrence.
pub fn char_ngrams(token: &str) -> Vec<String> {
    let chars: Vec<char> = format!("<{token}>").chars().collect();
    let mut out: Vec<String> = Vec::new();
    for n in MIN_NGRAM..=MAX_NGRAM {
        for start in 0..chars.len().saturating_sub(n - 1) {
            let g: String = chars[start..start + n].iter().collect();
            if !out.contains(&g) {
                out.push(g);
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Rows {
    names: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl Rows {
    fn get(&self, name: &str, dim: usize) -> Option<&[f32]> {
        self.index.get(name).map(|&i| &self.data[i * dim..(i + 1) * dim])
    }

    fn insert(&mut self, name: &str, values: &[f32]) -> bool {
        if self.index.contains_key(name) {
            return false;
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.data.extend_from_slice(values);
        true
    }
}

/// Immutable once built: nothing in model training takes a mutable reference.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Rows,
    ngrams: Rows,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable { dim, words: Rows::default(), ngrams: Rows::default() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.names.is_empty()
    }

    pub fn ngram_count(&self) -> usize {
        self.ngrams.names.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words.names
    }

    /// Adds a word vector; returns false (and keeps the old row) for duplicates.
    pub fn insert_word(&mut self, token: &str, values: &[f32]) -> bool {
        assert_eq!(values.len(), self.dim, "vector length must equal the table dimension");
        self.words.insert(token, values)
    }

    pub fn insert_ngram(&mut self, ngram: &str, values: &[f32]) -> bool {
        assert_eq!(values.len(), self.dim, "vector length must equal the table dimension");
        self.ngrams.insert(ngram, values)
    }

    pub fn word(&self, token: &str) -> Option<&[f32]> {
        self.words.get(token, self.dim)
    }

    pub fn ngram(&self, ngram: &str) -> Option<&[f32]> {
        self.ngrams.get(ngram, self.dim)
    }

    /// Stored vector for known tokens; otherwise the mean of the token's
    /// known n-gram vectors, or zeros when none are known.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.word(token) {
            return v.iter().map(|&x| x as f64).collect();
        }
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        if self.ngram_count() > 0 {
            for g in char_ngrams(token) {
                if let Some(v) = self.ngram(&g) {
                    for (a, &x) in acc.iter_mut().zip(v) {
                        *a += x as f64;
                    }
                    n += 1;
                }
            }
        }
        if n > 0 {
            acc.iter_mut().for_each(|a| *a /= n as f64);
        }
        acc
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.len() + self.ngram_count(), self.dim);
        for (prefix, rows) in [("", &self.words), (NGRAM_PREFIX, &self.ngrams)] {
            for (i, name) in rows.names.iter().enumerate() {
                out.push_str(prefix);
                out.push_str(name);
                for x in &rows.data[i * self.dim..(i + 1) * self.dim] {
                    let _ = write!(out, " {x}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EmbeddingError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
        let mut declared_dim = None;
        if let Some((_, first)) = lines.peek() {
            let fields: Vec<&str> = first.split_whitespace().collect();
            if fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                declared_dim = Some(fields[1].parse::<usize>().unwrap());
                lines.next();
            }
        }
        let mut table: Option<EmbeddingTable> = declared_dim.map(EmbeddingTable::new);
        let mut duplicates = 0usize;
        let mut row = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let mut fields = line.split_whitespace();
            let token = fields.next().unwrap();
            row.clear();
            for f in fields {
                let x: f32 = f.parse().map_err(|_| EmbeddingError::Format {
                    line: line_no,
                    message: format!("invalid number {f:?}"),
                })?;
                if !x.is_finite() {
                    return Err(EmbeddingError::Format { line: line_no, message: "non-finite value".into() });
                }
                row.push(x);
            }
            let t = table.get_or_insert_with(|| EmbeddingTable::new(row.len()));
            if row.len() != t.dim || row.is_empty() {
                return Err(EmbeddingError::Format {
                    line: line_no,
                    message: format!("expected {} values, found {}", t.dim, row.len()),
                });
            }
            let inserted = match token.strip_prefix(NGRAM_PREFIX) {
                Some(g) => t.insert_ngram(g, &row),
                None => t.insert_word(token, &row),
            };
            if !inserted {
                duplicates += 1;
            }
        }
        if duplicates > 0 {
            log::warn!("{duplicates} duplicate embedding rows ignored (first occurrence kept)");
        }
        table.ok_or(EmbeddingError::Format { line: 1, message: "no vectors".into() })
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| EmbeddingError::Io { path: path.display().to_string(), source })?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        std::fs::write(path, self.to_text())
            .map_err(|source| EmbeddingError::Io { path: path.display().to_string(), source })
    }

    /// SHA-256 over names and raw little-endian values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for rows in [&self.words, &self.ngrams] {
            h.update((rows.names.len() as u64).to_le_bytes());
            for name in &rows.names {
                h.update(name.as_bytes());
                h.update([0u8]);
            }
            for x in &rows.data {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_headerless_files() {
        let t = EmbeddingTable::from_text("2 3\ncat 1 2 3\ndog 4 5 6\n").unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));
        assert_eq!(t.word("dog").unwrap(), &[4.0, 5.0, 6.0]);

        let t = EmbeddingTable::from_text("cat 1 2\ndog 3 4\n").unwrap();
        assert_eq!((t.len(), t.dim()), (2, 2));
        assert_eq!(t.lookup("cat"), vec![1.0, 2.0]);
    }

    #[test]
    fn ragged_row_reports_line() {
        match EmbeddingTable::from_text("2 3\ncat 1 2 3\ndog 4 5\n") {
            Err(EmbeddingError::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(EmbeddingTable::from_text("cat 1 2\ndog 3\n").is_err());
    }

    #[test]
    fn duplicate_first_wins() {
        let t = EmbeddingTable::from_text("cat 1 2\ncat 3 4\n").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.word("cat").unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut t = EmbeddingTable::new(3);
        t.insert_word("a", &[0.1, -1.0e-7, 3.4028235e38]);
        t.insert_word("b's", &[1.0 / 3.0, 0.0, -2.5]);
        t.insert_ngram("<a>", &[f32::MIN_POSITIVE, 7.0, 1.0e-45]);
        let back = EmbeddingTable::from_text(&t.to_text()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_text(), t.to_text());
        assert_eq!(back.fingerprint(), t.fingerprint());
    }

    #[test]
    fn unknown_without_ngrams_is_zero() {
        let t = EmbeddingTable::from_text("cat 1 2\n").unwrap();
        assert_eq!(t.lookup("zebra"), vec![0.0, 0.0]);
    }

    /// Independent enumeration by byte slicing (ASCII only).
    fn oracle_ngrams(word: &str) -> Vec<String> {
        let w = format!("<{word}>");
        let mut set = std::collections::BTreeSet::new();
        for i in 0..w.len() {
            for j in i + 3..=(i + 6).min(w.len()) {
                set.insert(w[i..j].to_string());
            }
        }
        set.into_iter().collect()
    }

    #[test]
    fn ngram_enumeration_matches_oracle() {
        for w in ["a", "ab", "cheap", "restaurant", "i'm"] {
            let mut mine = char_ngrams(w);
            mine.sort();
            assert_eq!(mine, oracle_ngrams(w), "{w}");
        }
        assert_eq!(char_ngrams("ab"), vec!["<ab", "ab>", "<ab>"]);
    }

    #[test]
    fn unknown_word_is_mean_of_its_ngrams() {
        let mut t = EmbeddingTable::new(2);
        t.insert_word("cheap", &[9.0, 9.0]);
        let grams = oracle_ngrams("cheaper");
        let mut expected = [0.0f64; 2];
        for (k, g) in grams.iter().enumerate() {
            let v = [k as f32, 1.0 - 0.5 * k as f32];
            t.insert_ngram(g, &v);
            expected[0] += v[0] as f64;
            expected[1] += v[1] as f64;
        }
        // n-grams of other words must not contribute
        t.insert_ngram("zzz", &[100.0, 100.0]);
        let got = t.lookup("cheaper");
        for d in 0..2 {
            approx::assert_relative_eq!(got[d], expected[d] / grams.len() as f64, max_relative = 1e-12);
        }
    }
}
