//! Token-overlap ranking shared by CKG queries and usage-KB lookups.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "can", "do", "does", "for", "from", "how",
    "i", "in", "into", "is", "it", "me", "my", "of", "on", "or", "please", "should", "that", "the",
    "then", "this", "to", "use", "using", "what", "with", "you", "your",
];

/// Exact (case-insensitive) match on the entity name scores above any
/// overlap fraction.
pub const EXACT_NAME_SCORE: f64 = 2.0;

/// Crude suffix stripping so "resize", "resizing" and "resized" meet.
fn stem(word: &str) -> &str {
    let mut w = word;
    for suffix in ["ing", "ed", "es", "s"] {
        if w.len() > suffix.len() + 3 && !(suffix == "s" && w.ends_with("ss")) {
            if let Some(s) = w.strip_suffix(suffix) {
                w = s;
                break;
            }
        }
    }
    if w.len() > 4 {
        w = w.strip_suffix('e').unwrap_or(w);
    }
    w
}

/// Lowercased, stemmed alphanumeric tokens with stopwords removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .map(|w| String::from(stem(&w)))
        .collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// Fraction of distinct query tokens present in the document, in `[0, 1]`.
/// An empty query scores 0.
pub fn overlap(query: &BTreeSet<String>, doc: &BTreeSet<String>) -> f64 {
    if query.is_empty() {
        return 0.0;
    }
    let hit = query.iter().filter(|t| doc.contains(*t)).count();
    hit as f64 / query.len() as f64
}

/// Score of a named document against a query.
pub fn score(query: &str, name: &str, body: &str) -> f64 {
    let q = query.trim();
    if q.is_empty() {
        return 0.0;
    }
    if q.eq_ignore_ascii_case(name.trim()) {
        return EXACT_NAME_SCORE;
    }
    let mut doc = token_set(name);
    doc.extend(tokenize(body));
    overlap(&token_set(q), &doc)
}

/// Rank `(id, score)` pairs: positive scores only, highest first, ties by id.
pub fn rank<'a, T>(scored: impl IntoIterator<Item = (&'a str, f64, T)>) -> Vec<(f64, T)> {
    let mut v: Vec<(&str, f64, T)> = scored.into_iter().filter(|(_, s, _)| *s > 0.0).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v.into_iter().map(|(_, s, t)| (s, t)).collect()
}
