//! Term analysis shared by the sparse index and the expert language models.

use std::collections::BTreeSet;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

/// The classic Lucene English stop set.
pub const ENGLISH_STOPWORDS: [&str; 33] = [
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it",
    "no", "not", "of", "on", "or", "such", "that", "the", "their", "then", "there", "these",
    "they", "this", "to", "was", "will", "with",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub stopwords: BTreeSet<String>,
    pub stemming: bool,
}

impl Default for TokenizerConfig {
    /// Lowercase and split only.
    fn default() -> Self {
        TokenizerConfig::plain()
    }
}

impl TokenizerConfig {
    pub fn plain() -> Self {
        TokenizerConfig {
            lowercase: true,
            stopwords: BTreeSet::new(),
            stemming: false,
        }
    }

    /// Lowercasing, English stopword removal and Snowball English stemming.
    pub fn english() -> Self {
        TokenizerConfig {
            lowercase: true,
            stopwords: ENGLISH_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            stemming: true,
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize(text, self)
    }
}

/// Splits on runs of non-alphanumeric characters, then lowercases, drops
/// stopwords and stems as configured.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    let stemmer = config.stemming.then(|| Stemmer::create(Algorithm::English));
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter_map(|t| {
            let term = if config.lowercase { t.to_lowercase() } else { t.to_owned() };
            if config.stopwords.contains(&term) {
                return None;
            }
            Some(match &stemmer {
                Some(s) => s.stem(&term).into_owned(),
                None => term,
            })
        })
        .collect()
}
