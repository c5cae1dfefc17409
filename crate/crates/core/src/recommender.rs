//! Query and document formation plus the five recommendation methods:
//! document retrieval (sparse, flat, HNSW) collapsed to experts, and the
//! two language-model expert retrieval methods.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QuoteRecord;
use crate::dense::{DenseError, HnswIndex, VectorStore};
use crate::expert_lm::{AttributedDoc, ExpertMethod, ExpertRanking, LmError, LmStats};
use crate::scalar::Scalar;
use crate::sparse::{SparseError, SparseIndex};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_W: usize = 5;
pub const DEFAULT_EF_SEARCH: usize = 100;

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error("query field {0} is empty")]
    EmptyField(&'static str),
    #[error("query is empty")]
    EmptyQuery,
    #[error("{0} is not loaded")]
    IndexMissing(&'static str),
    #[error("no query vector for {0:?}")]
    MissingQueryVector(String),
    #[error("document {0:?} has no attributed source")]
    UnknownDocId(String),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("w must be at least 1")]
    InvalidW,
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    Title,
    Keywords,
    Summary,
}

impl FromStr for QueryMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "title" => Ok(QueryMode::Title),
            "keywords" => Ok(QueryMode::Keywords),
            "summary" => Ok(QueryMode::Summary),
            other => Err(format!("unknown query mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub mode: QueryMode,
    /// Word cap applied to expert-retrieval queries only.
    pub w: Option<usize>,
    pub strip_source: bool,
}

impl QuerySpec {
    pub fn new(mode: QueryMode) -> Self {
        QuerySpec {
            mode,
            w: Some(DEFAULT_W),
            strip_source: true,
        }
    }

    pub fn validate(&self) -> Result<(), RecommendError> {
        match self.w {
            Some(0) => Err(RecommendError::InvalidW),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocSpec {
    #[default]
    Sentence,
    Context,
}

impl FromStr for DocSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sentence" => Ok(DocSpec::Sentence),
            "context" => Ok(DocSpec::Context),
            other => Err(format!("unknown doc mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DrSparse,
    DrFlat,
    DrHnsw,
    ErCandidate,
    ErDocument,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::DrSparse,
        Method::DrFlat,
        Method::DrHnsw,
        Method::ErCandidate,
        Method::ErDocument,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::DrSparse => "dr_sparse",
            Method::DrFlat => "dr_flat",
            Method::DrHnsw => "dr_hnsw",
            Method::ErCandidate => "er_candidate",
            Method::ErDocument => "er_document",
        }
    }

    pub fn is_expert_retrieval(self) -> bool {
        matches!(self, Method::ErCandidate | Method::ErDocument)
    }

    pub fn needs_vectors(self) -> bool {
        matches!(self, Method::DrFlat | Method::DrHnsw)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = RecommendError;
    fn from_str(s: &str) -> Result<Self, RecommendError> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| RecommendError::UnknownMethod(s.to_owned()))
    }
}

fn bare(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Human-readable entity name: the last path segment with underscores as
/// spaces.
pub fn entity_display_name(entity: &str) -> String {
    let tail = entity.trim_end_matches('/').rsplit('/').next().unwrap_or(entity);
    tail.replace('_', " ")
}

fn first_sentence(text: &str) -> &str {
    let bytes = text.as_bytes();
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            let next = i + c.len_utf8();
            if next >= bytes.len() || text[next..].starts_with(char::is_whitespace) {
                return &text[..next];
            }
        }
    }
    text
}

/// Builds query text from one record's article fields.
pub fn form_query(record: &QuoteRecord, spec: &QuerySpec) -> Result<String, RecommendError> {
    spec.validate()?;
    let raw = match spec.mode {
        QueryMode::Title => {
            if record.title.trim().is_empty() {
                return Err(RecommendError::EmptyField("title"));
            }
            record.title.clone()
        }
        QueryMode::Keywords => {
            if record.keywords.iter().all(|k| k.trim().is_empty()) {
                return Err(RecommendError::EmptyField("keywords"));
            }
            record.keywords.join(" ")
        }
        QueryMode::Summary => {
            let s = first_sentence(record.summary_first_sentence.trim());
            if s.is_empty() {
                return Err(RecommendError::EmptyField("summary_first_sentence"));
            }
            s.to_owned()
        }
    };
    let mut words: Vec<&str> = raw.split_whitespace().collect();
    if spec.strip_source {
        let banned: HashSet<String> = record
            .source_surface
            .split_whitespace()
            .chain(entity_display_name(&record.source_entity).split_whitespace())
            .map(bare)
            .filter(|t| !t.is_empty())
            .collect();
        words.retain(|w| !banned.contains(&bare(w)));
    }
    if let Some(w) = spec.w {
        words.truncate(w);
    }
    Ok(words.join(" "))
}

/// `(doc_id, text)` for one record.
pub fn form_document(record: &QuoteRecord, spec: DocSpec) -> (String, String) {
    let text = match spec {
        DocSpec::Sentence => record.main_sentence.clone(),
        DocSpec::Context => [&record.left_sentence, &record.main_sentence, &record.right_sentence]
            .iter()
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" "),
    };
    (record.record_id.clone(), text)
}

pub fn attributed_documents(records: &[QuoteRecord], spec: DocSpec) -> Vec<AttributedDoc> {
    records
        .iter()
        .map(|r| {
            let (doc_id, text) = form_document(r, spec);
            AttributedDoc {
                doc_id,
                text,
                expert: r.source_entity.clone(),
            }
        })
        .collect()
}

/// Collapses a document ranking to experts ordered by their best document;
/// each expert keeps that document's score.
pub fn experts_from_documents<T: Scalar>(
    ranked_docs: &[(String, T)],
    doc_source: &HashMap<String, String>,
) -> Result<ExpertRanking<T>, RecommendError> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (doc, score) in ranked_docs {
        let expert = doc_source
            .get(doc)
            .ok_or_else(|| RecommendError::UnknownDocId(doc.clone()))?;
        if seen.insert(expert.as_str()) {
            entries.push((expert.clone(), *score));
        }
    }
    Ok(ExpertRanking { entries })
}

/// A query: text for sparse and language-model methods, an optional
/// pre-computed embedding for the dense methods.
#[derive(Debug, Clone, PartialEq)]
pub struct Query<T> {
    pub text: String,
    pub vector: Option<Vec<T>>,
}

impl<T> Query<T> {
    pub fn text(text: impl Into<String>) -> Self {
        Query {
            text: text.into(),
            vector: None,
        }
    }
}

/// Everything the methods may need. Missing parts make the dependent
/// methods fail with `IndexMissing`.
#[derive(Debug, Clone)]
pub struct RetrievalSet<T: Scalar> {
    pub doc_source: HashMap<String, String>,
    pub sparse: Option<SparseIndex<T>>,
    pub vectors: Option<VectorStore<T>>,
    pub hnsw: Option<HnswIndex<T>>,
    pub lm: Option<LmStats<T>>,
    pub query_vectors: Option<VectorStore<T>>,
    pub ef_search: usize,
}

impl<T: Scalar> Default for RetrievalSet<T> {
    fn default() -> Self {
        RetrievalSet {
            doc_source: HashMap::new(),
            sparse: None,
            vectors: None,
            hnsw: None,
            lm: None,
            query_vectors: None,
            ef_search: DEFAULT_EF_SEARCH,
        }
    }
}

impl<T: Scalar> RetrievalSet<T> {
    pub fn with_sources(records: &[QuoteRecord]) -> Self {
        RetrievalSet {
            doc_source: records
                .iter()
                .map(|r| (r.record_id.clone(), r.source_entity.clone()))
                .collect(),
            ..Self::default()
        }
    }

    pub fn supports(&self, method: Method) -> bool {
        match method {
            Method::DrSparse => self.sparse.is_some(),
            Method::DrFlat => self.vectors.is_some() || self.hnsw.is_some(),
            Method::DrHnsw => self.hnsw.is_some(),
            Method::ErCandidate | Method::ErDocument => self.lm.is_some(),
        }
    }

    /// Stored query embedding for a query id, if any.
    pub fn query_vector(&self, query_id: &str) -> Option<Vec<T>> {
        let store = self.query_vectors.as_ref()?;
        store.position(query_id).map(|i| store.vector(i).to_vec())
    }

    fn flat_store(&self) -> Option<&VectorStore<T>> {
        self.vectors.as_ref().or_else(|| self.hnsw.as_ref().map(HnswIndex::store))
    }

    /// Ranked documents for a document-retrieval method.
    pub fn retrieve_documents(
        &self,
        query: &Query<T>,
        method: Method,
        depth: usize,
    ) -> Result<Vec<(String, T)>, RecommendError> {
        match method {
            Method::DrSparse => {
                let index = self.sparse.as_ref().ok_or(RecommendError::IndexMissing("sparse index"))?;
                if query.text.trim().is_empty() {
                    return Err(RecommendError::EmptyQuery);
                }
                Ok(index.search(&query.text, depth).map_err(|e| match e {
                    SparseError::EmptyQuery => RecommendError::EmptyQuery,
                    other => other.into(),
                })?)
            }
            Method::DrFlat => {
                let store = self.flat_store().ok_or(RecommendError::IndexMissing("vector store"))?;
                let v = query.vector.as_ref().ok_or(RecommendError::EmptyQuery)?;
                Ok(store.search_flat(v, depth)?)
            }
            Method::DrHnsw => {
                let hnsw = self.hnsw.as_ref().ok_or(RecommendError::IndexMissing("hnsw index"))?;
                let v = query.vector.as_ref().ok_or(RecommendError::EmptyQuery)?;
                Ok(hnsw.search(v, depth, self.ef_search.max(depth))?)
            }
            Method::ErCandidate | Method::ErDocument => Err(RecommendError::UnknownMethod(method.to_string())),
        }
    }

    /// Top-`k` experts. Document retrieval cuts `k` documents and then
    /// collapses them to experts; expert retrieval ranks experts directly.
    pub fn recommend_query(
        &self,
        query: &Query<T>,
        method: Method,
        k: usize,
    ) -> Result<ExpertRanking<T>, RecommendError> {
        if k == 0 {
            return Err(RecommendError::InvalidK);
        }
        match method {
            Method::ErCandidate | Method::ErDocument => {
                let lm = self.lm.as_ref().ok_or(RecommendError::IndexMissing("language-model statistics"))?;
                let terms = lm.query_terms(&query.text);
                if terms.is_empty() {
                    return Err(RecommendError::EmptyQuery);
                }
                let m = if method == Method::ErCandidate {
                    ExpertMethod::Candidate
                } else {
                    ExpertMethod::Document
                };
                Ok(lm.rank_experts(&terms, m, k).map_err(|e| match e {
                    LmError::EmptyQuery => RecommendError::EmptyQuery,
                    other => other.into(),
                })?)
            }
            _ => {
                let docs = self.retrieve_documents(query, method, k)?;
                experts_from_documents(&docs, &self.doc_source)
            }
        }
    }

    /// Forms the query from `record` (w-truncation only for expert
    /// retrieval; dense methods use the stored vector keyed by record_id).
    pub fn recommend(
        &self,
        record: &QuoteRecord,
        method: Method,
        spec: &QuerySpec,
        k: usize,
    ) -> Result<ExpertRanking<T>, RecommendError> {
        let spec = if method.is_expert_retrieval() {
            *spec
        } else {
            QuerySpec { w: None, ..*spec }
        };
        let text = form_query(record, &spec)?;
        let vector = if method.needs_vectors() {
            if !self.supports(method) {
                return Err(RecommendError::IndexMissing(if method == Method::DrHnsw {
                    "hnsw index"
                } else {
                    "vector store"
                }));
            }
            Some(
                self.query_vector(&record.record_id)
                    .ok_or_else(|| RecommendError::MissingQueryVector(record.record_id.clone()))?,
            )
        } else {
            None
        };
        self.recommend_query(&Query { text, vector }, method, k)
    }
}

/// Writes `query_id expert_id rank score tag` lines.
pub fn write_run<T: Scalar, W: Write>(
    mut out: W,
    query_id: &str,
    ranking: &ExpertRanking<T>,
    tag: &str,
) -> std::io::Result<()> {
    for (i, (expert, score)) in ranking.entries.iter().enumerate() {
        writeln!(out, "{query_id} {expert} {} {score:.6} {tag}", i + 1)?;
    }
    Ok(())
}
