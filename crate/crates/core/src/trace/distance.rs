//! Word-level edit distance and the retention predicate built on it.
//!
//! Text is tokenized on Unicode whitespace and compared with an
//! insertion/deletion edit distance: replacing one word costs 2 (one delete
//! plus one insert). Under this metric the distance between two token
//! sequences equals `len(a) + len(b) - 2 * lcs(a, b)`.

use crate::error::{Error, Result};

/// Splits on Unicode whitespace, dropping empty tokens.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Insertion/deletion edit distance between two token sequences.
pub fn token_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    // Single-row DP for the LCS length.
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { above.max(row[j]) };
            diag = above;
        }
    }
    a.len() + b.len() - 2 * row[b.len()]
}

/// Word-level edit distance between two texts.
pub fn word_edit_distance(a: &str, b: &str) -> usize {
    token_edit_distance(&tokenize(a), &tokenize(b))
}

/// Whether a previously accepted suggestion still counts as present in a code
/// region: the word edit distance must stay below half the suggestion's word
/// count.
///
/// An empty suggestion has no retention semantics and is rejected.
pub fn retention_check(suggestion: &str, region: &str) -> Result<bool> {
    let suggestion_words = tokenize(suggestion).len();
    if suggestion_words == 0 {
        return Err(Error::EmptySuggestion);
    }
    let distance = word_edit_distance(suggestion, region);
    Ok((distance as f64) / (suggestion_words.max(1) as f64) < 0.5)
}
