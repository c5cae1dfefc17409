//! Dataset construction: deterministic filters over sentences that already
//! carry semantic-role frames and entity links, article de-duplication and
//! the chronological train/valid/test split.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::BufRead;

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, QuoteRecord, SplitLabel, MIN_QUOTE_TOKENS_EXCLUSIVE};

/// Ontology classes that disqualify an entity from being a source.
pub const EXCLUDED_SOURCE_CLASSES: [&str; 3] = ["Location", "Place", "Country"];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("trigger lexicon is empty")]
    EmptyLexicon,
    #[error("timestamps decrease at stream position {index}")]
    UnsortedStream { index: usize },
    #[error("record {record_id} published at {published_at} falls between the train and valid/test periods")]
    BoundaryError {
        record_id: String,
        published_at: DateTime<Utc>,
    },
    #[error("invalid split boundaries: {0}")]
    InvalidBoundaries(String),
    #[error("span {start}..{end} out of bounds for a sentence of {len} tokens")]
    InvalidSpan { start: usize, end: usize, len: usize },
    #[error("malformed SRL sentence: {0}")]
    Parse(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Curated quote trigger verbs, stored as lowercase lemmas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerLexicon {
    verbs: BTreeSet<String>,
}

impl TriggerLexicon {
    pub fn new<I, S>(verbs: I) -> Result<Self, PipelineError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let verbs: BTreeSet<String> = verbs
            .into_iter()
            .map(|v| v.as_ref().trim().to_lowercase())
            .filter(|v| !v.is_empty() && !v.starts_with('#'))
            .collect();
        if verbs.is_empty() {
            return Err(PipelineError::EmptyLexicon);
        }
        Ok(TriggerLexicon { verbs })
    }

    /// One entry per line; blank lines and `#` comments are ignored.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, PipelineError> {
        let lines = reader.lines().collect::<Result<Vec<_>, _>>()?;
        TriggerLexicon::new(lines)
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.verbs.contains(&lemma.to_lowercase())
    }

    /// Matches an inflected surface form by trying the form itself and a
    /// few regular suffix strippings (`says`, `warned`, `noting`).
    pub fn matches_surface(&self, word: &str) -> bool {
        let w = word.to_lowercase();
        if self.verbs.contains(&w) {
            return true;
        }
        let mut candidates = Vec::new();
        for suffix in ["s", "es", "ed", "d", "ing"] {
            if let Some(stem) = w.strip_suffix(suffix) {
                if stem.len() >= 2 {
                    candidates.push(stem.to_owned());
                    if suffix == "ing" || suffix == "ed" {
                        candidates.push(format!("{stem}e"));
                    }
                }
            }
        }
        candidates.iter().any(|c| self.verbs.contains(c))
    }

    pub fn len(&self) -> usize {
        self.verbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verbs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.verbs.iter().map(String::as_str)
    }
}

/// Half-open range `[start, end)` of whitespace-token indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        TokenSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, other: &TokenSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlFrame {
    pub verb: TokenSpan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb_lemma: Option<String>,
    pub subject: Option<TokenSpan>,
    pub object: Option<TokenSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub span: TokenSpan,
    pub entity_id: String,
    pub ontology_classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrlSentence {
    pub article_id: String,
    pub sentence_text: String,
    pub frames: Vec<SrlFrame>,
    pub entity_annotations: Vec<EntityAnnotation>,
    pub published_at: DateTime<Utc>,
    pub title: String,
    #[serde(default)]
    pub summary_first_sentence: String,
}

impl SrlSentence {
    pub fn parse(line: &str) -> Result<Self, PipelineError> {
        let s: SrlSentence =
            serde_json::from_str(line).map_err(|e| PipelineError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn tokens(&self) -> Vec<&str> {
        self.sentence_text.split_whitespace().collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let len = self.tokens().len();
        let check = |span: &TokenSpan| {
            if span.start > span.end || span.end > len {
                Err(PipelineError::InvalidSpan {
                    start: span.start,
                    end: span.end,
                    len,
                })
            } else {
                Ok(())
            }
        };
        for f in &self.frames {
            check(&f.verb)?;
            if let Some(s) = &f.subject {
                check(s)?;
            }
            if let Some(o) = &f.object {
                check(o)?;
            }
        }
        for a in &self.entity_annotations {
            check(&a.span)?;
        }
        Ok(())
    }

    pub fn span_text(&self, span: TokenSpan) -> String {
        self.tokens()[span.start..span.end].join(" ")
    }

    pub fn with_frames(&self, frames: Vec<SrlFrame>) -> SrlSentence {
        SrlSentence {
            frames,
            ..self.clone()
        }
    }

    /// The first entity annotation lying inside the frame's subject span.
    pub fn subject_entity(&self, frame: &SrlFrame) -> Option<&EntityAnnotation> {
        subject_entity(frame, &self.entity_annotations)
    }
}

fn subject_entity<'a>(
    frame: &SrlFrame,
    annotations: &'a [EntityAnnotation],
) -> Option<&'a EntityAnnotation> {
    let subject = frame.subject.filter(|s| !s.is_empty())?;
    annotations
        .iter()
        .find(|a| !a.span.is_empty() && subject.contains(&a.span))
}

fn frame_lemma(tokens: &[&str], frame: &SrlFrame) -> String {
    match &frame.verb_lemma {
        Some(lemma) => lemma.to_lowercase(),
        None => tokens[frame.verb.start..frame.verb.end].join(" ").to_lowercase(),
    }
}

/// Keeps frames with a lexicon verb, a non-empty subject and an object of
/// more than three tokens.
pub fn srl_filter(sentence: &SrlSentence, lexicon: &TriggerLexicon) -> Vec<SrlFrame> {
    let tokens = sentence.tokens();
    sentence
        .frames
        .iter()
        .filter(|f| {
            let subject_ok = f.subject.is_some_and(|s| !s.is_empty());
            let object_ok = f.object.is_some_and(|o| o.len() > MIN_QUOTE_TOKENS_EXCLUSIVE);
            subject_ok && object_ok && lexicon.contains(&frame_lemma(&tokens, f))
        })
        .cloned()
        .collect()
}

/// Which entities may act as sources.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourcePolicy {
    pub allowed_classes: BTreeSet<String>,
    pub min_count: usize,
}

impl SourcePolicy {
    pub fn new<I, S>(allowed: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        SourcePolicy {
            allowed_classes: allowed
                .into_iter()
                .map(|c| c.as_ref().trim().to_owned())
                .filter(|c| !c.is_empty() && !c.starts_with('#'))
                .collect(),
            min_count,
        }
    }

    pub fn read<R: BufRead>(reader: R, min_count: usize) -> Result<Self, PipelineError> {
        let lines = reader.lines().collect::<Result<Vec<_>, _>>()?;
        Ok(SourcePolicy::new(lines, min_count))
    }

    pub fn admits_classes(&self, classes: &[String]) -> bool {
        let excluded = classes
            .iter()
            .any(|c| EXCLUDED_SOURCE_CLASSES.contains(&c.as_str()));
        !excluded && classes.iter().any(|c| self.allowed_classes.contains(c))
    }
}

/// Keeps frames whose subject carries an admissible entity that occurs at
/// least `policy.min_count` times as a source in `corpus_counts`.
pub fn source_filter(
    frames: &[SrlFrame],
    annotations: &[EntityAnnotation],
    policy: &SourcePolicy,
    corpus_counts: &HashMap<String, usize>,
) -> Vec<SrlFrame> {
    frames
        .iter()
        .filter(|f| {
            subject_entity(f, annotations).is_some_and(|e| {
                policy.admits_classes(&e.ontology_classes)
                    && corpus_counts.get(&e.entity_id).copied().unwrap_or(0) >= policy.min_count
            })
        })
        .cloned()
        .collect()
}

/// Entity-as-source occurrence counts over every frame of the pool.
pub fn count_source_entities<'a, I>(sentences: I) -> HashMap<String, usize>
where
    I: IntoIterator<Item = &'a SrlSentence>,
{
    let mut counts = HashMap::new();
    for s in sentences {
        for f in &s.frames {
            if let Some(e) = s.subject_entity(f) {
                *counts.entry(e.entity_id.clone()).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// True iff straight double quotes come in pairs and curly quotes nest as
/// open/close pairs.
pub fn paired_quotes_check(sentence_text: &str) -> bool {
    let mut straight = 0usize;
    let mut open_curly = 0usize;
    for c in sentence_text.chars() {
        match c {
            '"' => straight += 1,
            '\u{201C}' => open_curly += 1,
            '\u{201D}' => {
                if open_curly == 0 {
                    return false;
                }
                open_curly -= 1;
            }
            _ => {}
        }
    }
    straight.is_multiple_of(2) && open_curly == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleHeader {
    pub title: String,
    pub summary_first_sentence: String,
    pub published_at: DateTime<Utc>,
}

const SHINGLE: usize = 4;

fn shingles(article: &ArticleHeader) -> HashSet<String> {
    let text = format!("{} {}", article.title, article.summary_first_sentence);
    let normalized: Vec<char> = text
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .collect();
    if normalized.len() < SHINGLE {
        return std::iter::once(normalized.into_iter().collect()).collect();
    }
    normalized
        .windows(SHINGLE)
        .map(|w| w.iter().collect())
        .collect()
}

/// Jaccard similarity of the character 4-gram sets of title + summary
/// (lowercased, whitespace collapsed).
pub fn shingle_jaccard(a: &ArticleHeader, b: &ArticleHeader) -> f64 {
    jaccard(&shingles(a), &shingles(b))
}

fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Indices of the articles kept by [`dedup_stream`].
pub fn dedup_indices(
    articles: &[ArticleHeader],
    jaccard_threshold: f64,
) -> Result<Vec<usize>, PipelineError> {
    if let Some(i) = articles
        .windows(2)
        .position(|w| w[1].published_at < w[0].published_at)
    {
        return Err(PipelineError::UnsortedStream { index: i + 1 });
    }
    let mut kept: Vec<(usize, HashSet<String>)> = Vec::new();
    for (i, article) in articles.iter().enumerate() {
        let grams = shingles(article);
        if kept.iter().all(|(_, g)| jaccard(&grams, g) < jaccard_threshold) {
            kept.push((i, grams));
        }
    }
    Ok(kept.into_iter().map(|(i, _)| i).collect())
}

/// Drops every article whose shingle similarity to an earlier retained
/// article reaches the threshold. The input must be in timestamp order.
pub fn dedup_stream(
    articles: &[ArticleHeader],
    jaccard_threshold: f64,
) -> Result<Vec<ArticleHeader>, PipelineError> {
    Ok(dedup_indices(articles, jaccard_threshold)?
        .into_iter()
        .map(|i| articles[i].clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitBoundaries {
    pub train_end: DateTime<Utc>,
    pub valid_test_start: DateTime<Utc>,
    pub valid_fraction: f64,
}

impl SplitBoundaries {
    pub fn new(
        train_end: DateTime<Utc>,
        valid_test_start: DateTime<Utc>,
        valid_fraction: f64,
    ) -> Result<Self, PipelineError> {
        if train_end > valid_test_start {
            return Err(PipelineError::InvalidBoundaries(
                "train_end is after valid_test_start".into(),
            ));
        }
        if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
            return Err(PipelineError::InvalidBoundaries(format!(
                "valid_fraction {valid_fraction} outside (0, 1)"
            )));
        }
        Ok(SplitBoundaries {
            train_end,
            valid_test_start,
            valid_fraction,
        })
    }
}

impl Default for SplitBoundaries {
    /// Training data up to the end of 2020-05-31, evaluation data from
    /// 2020-06-21 onwards, evaluation half split evenly.
    fn default() -> Self {
        SplitBoundaries {
            train_end: Utc.with_ymd_and_hms(2020, 5, 31, 23, 59, 59).unwrap(),
            valid_test_start: Utc.with_ymd_and_hms(2020, 6, 21, 0, 0, 0).unwrap(),
            valid_fraction: 0.5,
        }
    }
}

/// Assigns records at or before `train_end` to train; records at or after
/// `valid_test_start` go to valid with probability `valid_fraction`
/// (seeded, drawn in input order) and otherwise to test.
pub fn chronological_split(
    records: Vec<QuoteRecord>,
    boundaries: &SplitBoundaries,
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus), PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for r in records {
        if r.published_at <= boundaries.train_end {
            train.push(r);
        } else if r.published_at >= boundaries.valid_test_start {
            if rng.random::<f64>() < boundaries.valid_fraction {
                valid.push(r);
            } else {
                test.push(r);
            }
        } else {
            return Err(PipelineError::BoundaryError {
                record_id: r.record_id,
                published_at: r.published_at,
            });
        }
    }
    Ok((
        Corpus::new(train, SplitLabel::Train)?,
        Corpus::new(valid, SplitLabel::Valid)?,
        Corpus::new(test, SplitLabel::Test)?,
    ))
}

/// A quote candidate that survived every construction filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredCandidate {
    pub article_id: String,
    pub sentence_text: String,
    pub verb: String,
    pub source_text: String,
    pub quote_text: String,
    pub source_entity: String,
    pub ontology_classes: Vec<String>,
    pub title: String,
    pub published_at: DateTime<Utc>,
}

/// Runs the whole filter chain: article de-duplication, quote-mark pairing,
/// trigger/subject/object filtering and source filtering. Source counts
/// are taken over the de-duplicated pool before frame filtering.
pub fn run_filters(
    sentences: &[SrlSentence],
    lexicon: &TriggerLexicon,
    policy: &SourcePolicy,
    jaccard_threshold: f64,
) -> Result<Vec<FilteredCandidate>, PipelineError> {
    let mut headers: Vec<(String, ArticleHeader)> = Vec::new();
    let mut seen = HashSet::new();
    for s in sentences {
        if seen.insert(s.article_id.as_str()) {
            headers.push((
                s.article_id.clone(),
                ArticleHeader {
                    title: s.title.clone(),
                    summary_first_sentence: s.summary_first_sentence.clone(),
                    published_at: s.published_at,
                },
            ));
        }
    }
    headers.sort_by(|a, b| a.1.published_at.cmp(&b.1.published_at).then(a.0.cmp(&b.0)));
    let stream: Vec<ArticleHeader> = headers.iter().map(|(_, h)| h.clone()).collect();
    let retained: HashSet<&str> = dedup_indices(&stream, jaccard_threshold)?
        .into_iter()
        .map(|i| headers[i].0.as_str())
        .collect();

    let pool: Vec<&SrlSentence> = sentences
        .iter()
        .filter(|s| retained.contains(s.article_id.as_str()))
        .collect();
    let counts = count_source_entities(pool.iter().copied());

    let mut out = Vec::new();
    for s in pool {
        if !paired_quotes_check(&s.sentence_text) {
            continue;
        }
        let triggered = srl_filter(s, lexicon);
        for f in source_filter(&triggered, &s.entity_annotations, policy, &counts) {
            let entity = s.subject_entity(&f).expect("source_filter guarantees an entity");
            out.push(FilteredCandidate {
                article_id: s.article_id.clone(),
                sentence_text: s.sentence_text.clone(),
                verb: s.span_text(f.verb),
                source_text: s.span_text(f.subject.expect("checked by srl_filter")),
                quote_text: s.span_text(f.object.expect("checked by srl_filter")),
                source_entity: entity.entity_id.clone(),
                ontology_classes: entity.ontology_classes.clone(),
                title: s.title.clone(),
                published_at: s.published_at,
            });
        }
    }
    Ok(out)
}
