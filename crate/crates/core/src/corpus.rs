//! Quote records, corpora and dataset statistics.
//!
//! A record is one quote occurrence: the sentence it appeared in, the
//! neighbouring sentences, the attributed source entity and the metadata of
//! the article it came from. Records are stored one JSON object per line.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::annotator::classify_quote_type;

/// Quotes must be longer than this many whitespace tokens.
pub const MIN_QUOTE_TOKENS_EXCLUSIVE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuoteType {
    Direct,
    Indirect,
    Mixed,
}

impl QuoteType {
    pub fn as_str(self) -> &'static str {
        match self {
            QuoteType::Direct => "direct",
            QuoteType::Indirect => "indirect",
            QuoteType::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteRecord {
    pub record_id: String,
    pub left_sentence: String,
    pub main_sentence: String,
    pub right_sentence: String,
    pub quote: String,
    pub source_surface: String,
    /// Canonical entity identifier, usually a DBpedia resource link.
    pub source_entity: String,
    pub ontology_classes: Vec<String>,
    pub keywords: Vec<String>,
    pub title: String,
    pub summary_first_sentence: String,
    pub categories: Vec<String>,
    pub news_source: String,
    pub published_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quote_type: Option<QuoteType>,
    /// Fields this version does not know about; written back verbatim.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// A record invariant that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Invariant {
    #[error("record_id must be non-empty")]
    EmptyRecordId,
    #[error("quote must have more than 3 tokens, found {0}")]
    QuoteTooShort(usize),
    #[error("quote is not a substring of main_sentence")]
    QuoteNotInSentence,
    #[error("source_surface is not a substring of main_sentence")]
    SourceNotInSentence,
    #[error("published_at is not a valid RFC 3339 timestamp: {0:?}")]
    BadTimestamp(String),
    #[error("source_entity must be non-empty")]
    EmptySourceEntity,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("schema error in field `{field}`: {reason}")]
    Schema { field: String, reason: String },
    #[error("invariant violated: {0}")]
    Invariant(#[from] Invariant),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Record { line: usize, source: RecordError },
    #[error("duplicate record_id {0:?}")]
    DuplicateRecordId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy)]
enum FieldKind {
    Str,
    StrList,
}

const REQUIRED_FIELDS: &[(&str, FieldKind)] = &[
    ("record_id", FieldKind::Str),
    ("left_sentence", FieldKind::Str),
    ("main_sentence", FieldKind::Str),
    ("right_sentence", FieldKind::Str),
    ("quote", FieldKind::Str),
    ("source_surface", FieldKind::Str),
    ("source_entity", FieldKind::Str),
    ("ontology_classes", FieldKind::StrList),
    ("keywords", FieldKind::StrList),
    ("title", FieldKind::Str),
    ("summary_first_sentence", FieldKind::Str),
    ("categories", FieldKind::StrList),
    ("news_source", FieldKind::Str),
    ("published_at", FieldKind::Str),
];

fn schema(field: &str, reason: impl Into<String>) -> RecordError {
    RecordError::Schema {
        field: field.to_owned(),
        reason: reason.into(),
    }
}

/// Parses and validates one serialized record.
pub fn parse_record(line: &str) -> Result<QuoteRecord, RecordError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| schema("<record>", e.to_string()))?;
    let Value::Object(obj) = &value else {
        return Err(schema("<record>", "expected a JSON object"));
    };
    for &(field, kind) in REQUIRED_FIELDS {
        let Some(v) = obj.get(field) else {
            return Err(schema(field, "missing"));
        };
        let ok = match kind {
            FieldKind::Str => v.is_string(),
            FieldKind::StrList => v
                .as_array()
                .is_some_and(|items| items.iter().all(Value::is_string)),
        };
        if !ok {
            let expected = match kind {
                FieldKind::Str => "expected a string",
                FieldKind::StrList => "expected a list of strings",
            };
            return Err(schema(field, expected));
        }
    }
    match obj.get("quote_type") {
        None | Some(Value::Null) => {}
        Some(Value::String(s)) if matches!(s.as_str(), "direct" | "indirect" | "mixed") => {}
        Some(_) => return Err(schema("quote_type", "expected direct, indirect or mixed")),
    }
    let raw_ts = obj["published_at"].as_str().unwrap_or_default();
    if DateTime::parse_from_rfc3339(raw_ts).is_err() {
        return Err(Invariant::BadTimestamp(raw_ts.to_owned()).into());
    }
    let record: QuoteRecord =
        serde_json::from_value(value).map_err(|e| schema("<record>", e.to_string()))?;
    record.validate()?;
    Ok(record)
}

impl QuoteRecord {
    pub fn validate(&self) -> Result<(), Invariant> {
        if self.record_id.is_empty() {
            return Err(Invariant::EmptyRecordId);
        }
        let quote_tokens = self.quote.split_whitespace().count();
        if quote_tokens <= MIN_QUOTE_TOKENS_EXCLUSIVE {
            return Err(Invariant::QuoteTooShort(quote_tokens));
        }
        if !self.main_sentence.contains(&self.quote) {
            return Err(Invariant::QuoteNotInSentence);
        }
        if self.source_surface.is_empty() || !self.main_sentence.contains(&self.source_surface) {
            return Err(Invariant::SourceNotInSentence);
        }
        if self.source_entity.trim().is_empty() {
            return Err(Invariant::EmptySourceEntity);
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    /// Identity of the article this record came from.
    pub fn article_key(&self) -> (&str, DateTime<Utc>) {
        (&self.title, self.published_at)
    }

    pub fn quote_len(&self) -> usize {
        self.quote.split_whitespace().count()
    }

    /// The stored quote type, or the one inferred from quotation marks.
    pub fn effective_quote_type(&self) -> QuoteType {
        self.quote_type.unwrap_or_else(|| classify_quote_type(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Valid,
    Test,
    #[default]
    Unsplit,
}

/// An ordered, immutable set of records with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    records: Vec<QuoteRecord>,
    split: SplitLabel,
}

impl Corpus {
    pub fn new(records: Vec<QuoteRecord>, split: SplitLabel) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.record_id.as_str()) {
                return Err(CorpusError::DuplicateRecordId(r.record_id.clone()));
            }
        }
        Ok(Corpus { records, split })
    }

    pub fn records(&self) -> &[QuoteRecord] {
        &self.records
    }

    pub fn split(&self) -> SplitLabel {
        self.split
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: &str) -> Option<&QuoteRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    pub fn into_records(self) -> Vec<QuoteRecord> {
        self.records
    }

    /// Reads newline-delimited records; blank lines are skipped.
    pub fn read<R: BufRead>(reader: R, split: SplitLabel) -> Result<Self, CorpusError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record =
                parse_record(&line).map_err(|source| CorpusError::Record { line: i + 1, source })?;
            records.push(record);
        }
        Corpus::new(records, split)
    }

    pub fn load(path: impl AsRef<Path>, split: SplitLabel) -> Result<Self, CorpusError> {
        let file = File::open(path)?;
        Corpus::read(BufReader::new(file), split)
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            writeln!(out, "{}", r.to_json_line())?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuoteTypeProportions {
    pub direct: f64,
    pub indirect: f64,
    pub mixed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_samples: usize,
    pub n_articles: usize,
    pub n_source_entities: usize,
    pub avg_quote_length: f64,
    pub n_news_sources: usize,
    pub n_categories: usize,
    pub avg_keywords_per_article: f64,
    pub quote_type_proportions: QuoteTypeProportions,
}

/// Dataset statistics. Articles are identified by `(title, published_at)`;
/// keyword counts are taken from the first record seen for each article.
/// Records without a stored quote type are classified from their quote span.
pub fn corpus_stats(corpus: &Corpus) -> Result<StatsReport, CorpusError> {
    let records = corpus.records();
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut articles = HashSet::new();
    let mut keyword_total = 0usize;
    let mut entities = HashSet::new();
    let mut publishers = HashSet::new();
    let mut categories = BTreeSet::new();
    let mut quote_tokens = 0usize;
    let mut counts = [0usize; 3];
    for r in records {
        if articles.insert(r.article_key()) {
            keyword_total += r.keywords.len();
        }
        entities.insert(r.source_entity.as_str());
        publishers.insert(r.news_source.as_str());
        categories.extend(r.categories.iter().map(String::as_str));
        quote_tokens += r.quote_len();
        let slot = match r.effective_quote_type() {
            QuoteType::Direct => 0,
            QuoteType::Indirect => 1,
            QuoteType::Mixed => 2,
        };
        counts[slot] += 1;
    }
    let n = records.len() as f64;
    Ok(StatsReport {
        n_samples: records.len(),
        n_articles: articles.len(),
        n_source_entities: entities.len(),
        avg_quote_length: quote_tokens as f64 / n,
        n_news_sources: publishers.len(),
        n_categories: categories.len(),
        avg_keywords_per_article: keyword_total as f64 / articles.len() as f64,
        quote_type_proportions: QuoteTypeProportions {
            direct: counts[0] as f64 / n,
            indirect: counts[1] as f64 / n,
            mixed: counts[2] as f64 / n,
        },
    })
}

impl std::fmt::Display for StatsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = &self.quote_type_proportions;
        writeln!(f, "{:<28}{:>12}", "No. of samples", self.n_samples)?;
        writeln!(f, "{:<28}{:>12}", "No. of articles", self.n_articles)?;
        writeln!(f, "{:<28}{:>12}", "No. of source entities", self.n_source_entities)?;
        writeln!(f, "{:<28}{:>12.2}", "Avg. quote length", self.avg_quote_length)?;
        writeln!(f, "{:<28}{:>12}", "No. of news sources", self.n_news_sources)?;
        writeln!(f, "{:<28}{:>12}", "No. of categories", self.n_categories)?;
        writeln!(f, "{:<28}{:>12.2}", "Avg. keywords per article", self.avg_keywords_per_article)?;
        write!(
            f,
            "{:<28}{:>12}",
            "Indirect / direct / mixed",
            format!(
                "{:.0}/{:.0}/{:.0}",
                p.indirect * 100.0,
                p.direct * 100.0,
                p.mixed * 100.0
            )
        )
    }
}
