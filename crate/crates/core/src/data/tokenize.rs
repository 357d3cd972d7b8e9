/// Literal marker the bAbI files use for a user turn with no speech.
pub const SILENCE_MARKER: &str = "<SILENCE>";
/// Reserved token standing for a silent user turn.
pub const SILENCE_TOKEN: &str = "<silence>";
/// Reserved out-of-vocabulary sentinel.
pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Lowercases, splits on whitespace and strips surrounding punctuation
/// (apostrophes are kept). The silence marker becomes [`SILENCE_TOKEN`].
///
/// This is the only tokenizer in the crate: corpus preparation, embedding
/// training and serving all go through it.
pub fn tokenize(raw: &str) -> Vec<String> {
    let trimmed = raw.trim();
    if trimmed == SILENCE_MARKER {
        return vec![SILENCE_TOKEN.to_string()];
    }
    trimmed
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}
