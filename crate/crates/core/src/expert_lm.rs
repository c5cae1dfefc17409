//! Candidate-based and document-based expert retrieval with
//! maximum-likelihood term models, computed in log space.
//!
//! Every corpus document is one quote context attributed to exactly one
//! expert, so the expert/document association `n(e, d)` is 1 for the
//! attributed expert and 0 otherwise, `p(d|e)` is the Boolean indicator of
//! that association, and `n(e)` is the number of documents attributed to
//! `e`. Scores are ranking quantities, not normalized posteriors.
//!
//! Candidate-based, with `lambda = beta / (beta + n(e))` and
//! `beta = (sum over experts of |{d : n(e,d) > 0}|) * avgdl / |E|`:
//!
//! ```text
//! log P(q|e) = sum_t n(t,q) * ln((1 - lambda) * sum_d p(t|d) p(d|e) + lambda * p(t))
//! ```
//!
//! Document-based, with `lambda_d = avgdl / (avgdl + n(d))`:
//!
//! ```text
//! log P(q|e) = ln sum_{d : p(d|e) = 1} exp(sum_t n(t,q) * ln((1 - lambda_d) p(t|d) + lambda_d p(t)))
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::scalar::{log_sum_exp, Scalar};
use crate::sparse::{read_config, write_config};
use crate::tokenizer::TokenizerConfig;

pub const LM_MAGIC: &[u8; 4] = b"SQL1";

/// `(doc_id, expert, sorted (term ordinal, count) pairs)`.
type StoredDoc = (String, String, Vec<(u32, u32)>);
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
    #[error("unknown expert {0:?}")]
    UnknownExpert(String),
    #[error("query has no terms")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertMethod {
    Candidate,
    Document,
}

/// Experts with scores in non-increasing order; experts are unique.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ExpertRanking<T> {
    pub entries: Vec<(String, T)>,
}

impl<T: Scalar> ExpertRanking<T> {
    /// Sorts by descending score then ascending expert id.
    pub fn from_unsorted(mut entries: Vec<(String, T)>) -> Self {
        entries.sort_by(|a, b| a.1.total_cmp_desc(&b.1).then_with(|| a.0.cmp(&b.0)));
        ExpertRanking { entries }
    }

    pub fn experts(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(e, _)| e.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.entries.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err("scores increase".into());
        }
        let mut seen = std::collections::HashSet::new();
        if let Some((dup, _)) = self.entries.iter().find(|(e, _)| !seen.insert(e.as_str())) {
            return Err(format!("duplicate expert {dup:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmStats<T: Scalar> {
    config: TokenizerConfig,
    terms: Vec<String>,
    vocab: HashMap<String, u32>,
    doc_ids: Vec<String>,
    /// Sorted `(term id, count)` pairs per document.
    doc_terms: Vec<Vec<(u32, u32)>>,
    doc_lengths: Vec<u64>,
    doc_expert: Vec<u32>,
    background_counts: Vec<u64>,
    total_tokens: u64,
    experts: Vec<String>,
    associations: Vec<Vec<u32>>,
    avg_doc_length: T,
    beta_candidate: T,
}

/// One corpus document with the expert its quote is attributed to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributedDoc {
    pub doc_id: String,
    pub text: String,
    pub expert: String,
}

impl<T: Scalar> LmStats<T> {
    pub fn build<I>(docs: I, config: TokenizerConfig) -> Result<Self, LmError>
    where
        I: IntoIterator<Item = AttributedDoc>,
    {
        let mut vocab_sorted: BTreeMap<String, ()> = BTreeMap::new();
        let mut analyzed: Vec<(String, String, Vec<String>)> = docs
            .into_iter()
            .map(|d| {
                let toks = config.tokenize(&d.text);
                for t in &toks {
                    vocab_sorted.entry(t.clone()).or_insert(());
                }
                (d.doc_id, d.expert, toks)
            })
            .collect();
        analyzed.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = analyzed.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(LmError::DuplicateDocId(w[0].0.clone()));
        }
        let terms: Vec<String> = vocab_sorted.into_keys().collect();
        let vocab: HashMap<String, u32> = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let docs = analyzed
            .into_iter()
            .map(|(id, expert, toks)| {
                let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
                for t in &toks {
                    *counts.entry(vocab[t]).or_insert(0) += 1;
                }
                (id, expert, counts.into_iter().collect())
            })
            .collect();
        Ok(Self::from_parts(config, terms, docs))
    }

    /// Derives every statistic from the vocabulary and per-document counts.
    fn from_parts(config: TokenizerConfig, terms: Vec<String>, docs: Vec<StoredDoc>) -> Self {
        let vocab = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let mut experts: Vec<String> = docs.iter().map(|d| d.1.clone()).collect();
        experts.sort();
        experts.dedup();
        let expert_ord: HashMap<&str, u32> = experts.iter().enumerate().map(|(i, e)| (e.as_str(), i as u32)).collect();

        let mut background_counts = vec![0u64; terms.len()];
        let mut associations = vec![Vec::new(); experts.len()];
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut doc_terms = Vec::with_capacity(docs.len());
        let mut doc_lengths = Vec::with_capacity(docs.len());
        let mut doc_expert = Vec::with_capacity(docs.len());
        for (ord, (id, expert, counts)) in docs.into_iter().enumerate() {
            let e = expert_ord[expert.as_str()];
            associations[e as usize].push(ord as u32);
            let len: u64 = counts.iter().map(|&(_, c)| c as u64).sum();
            for &(t, c) in &counts {
                background_counts[t as usize] += c as u64;
            }
            doc_ids.push(id);
            doc_terms.push(counts);
            doc_lengths.push(len);
            doc_expert.push(e);
        }
        let total_tokens: u64 = doc_lengths.iter().sum();
        let avg_doc_length = if doc_ids.is_empty() {
            T::zero()
        } else {
            T::from_u64(total_tokens).expect("fits") / T::from_count(doc_ids.len())
        };
        let associated: usize = associations.iter().map(Vec::len).sum();
        let beta_candidate = if experts.is_empty() {
            T::zero()
        } else {
            T::from_count(associated) * avg_doc_length / T::from_count(experts.len())
        };
        LmStats {
            config,
            terms,
            vocab,
            doc_ids,
            doc_terms,
            doc_lengths,
            doc_expert,
            background_counts,
            total_tokens,
            experts,
            associations,
            avg_doc_length,
            beta_candidate,
        }
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn query_terms(&self, text: &str) -> Vec<String> {
        self.config.tokenize(text)
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn experts(&self) -> &[String] {
        &self.experts
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn avg_doc_length(&self) -> T {
        self.avg_doc_length
    }

    pub fn beta_candidate(&self) -> T {
        self.beta_candidate
    }

    /// `n(e)`: the number of documents attributed to `expert`.
    pub fn expert_occurrences(&self, expert: &str) -> Option<usize> {
        self.expert_ord(expert).map(|e| self.associations[e].len())
    }

    pub fn associated_docs(&self, expert: &str) -> Option<Vec<&str>> {
        let e = self.expert_ord(expert)?;
        Some(self.associations[e].iter().map(|&d| self.doc_ids[d as usize].as_str()).collect())
    }

    pub fn doc_expert(&self, doc_id: &str) -> Option<&str> {
        let d = self.doc_ord(doc_id)?;
        Some(&self.experts[self.doc_expert[d] as usize])
    }

    fn expert_ord(&self, expert: &str) -> Option<usize> {
        self.experts.binary_search_by(|e| e.as_str().cmp(expert)).ok()
    }

    fn doc_ord(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|d| d.as_str().cmp(doc_id)).ok()
    }

    fn count_in_doc(&self, doc: usize, term: u32) -> u32 {
        let list = &self.doc_terms[doc];
        list.binary_search_by_key(&term, |&(t, _)| t).map_or(0, |i| list[i].1)
    }

    /// Maximum-likelihood `p(t|d)`; zero for empty documents.
    fn p_term_doc(&self, doc: usize, term: Option<u32>) -> T {
        let len = self.doc_lengths[doc];
        match term {
            Some(t) if len > 0 => {
                T::from_count(self.count_in_doc(doc, t) as usize) / T::from_u64(len).expect("fits")
            }
            _ => T::zero(),
        }
    }

    /// Maximum-likelihood background `p(t)`; zero for unseen terms.
    fn p_term(&self, term: Option<u32>) -> T {
        match term {
            Some(t) if self.total_tokens > 0 => {
                T::from_u64(self.background_counts[t as usize]).expect("fits")
                    / T::from_u64(self.total_tokens).expect("fits")
            }
            _ => T::zero(),
        }
    }

    pub fn p_term_given_doc(&self, term: &str, doc_id: &str) -> Option<T> {
        let d = self.doc_ord(doc_id)?;
        Some(self.p_term_doc(d, self.vocab.get(term).copied()))
    }

    pub fn p_background(&self, term: &str) -> T {
        self.p_term(self.vocab.get(term).copied())
    }

    /// Unique query terms (vocabulary id or `None`) with their counts.
    fn query_counts(&self, query_terms: &[String]) -> Result<Vec<(Option<u32>, T)>, LmError> {
        if query_terms.is_empty() {
            return Err(LmError::EmptyQuery);
        }
        let mut out: Vec<(&str, usize)> = Vec::new();
        for t in query_terms {
            match out.iter_mut().find(|(s, _)| *s == t.as_str()) {
                Some((_, c)) => *c += 1,
                None => out.push((t.as_str(), 1)),
            }
        }
        Ok(out
            .into_iter()
            .map(|(t, c)| (self.vocab.get(t).copied(), T::from_count(c)))
            .collect())
    }

    fn candidate_score(&self, expert: usize, query: &[(Option<u32>, T)]) -> T {
        let docs = &self.associations[expert];
        let n_e = T::from_count(docs.len());
        let lambda = if self.beta_candidate + n_e == T::zero() {
            T::zero()
        } else {
            self.beta_candidate / (self.beta_candidate + n_e)
        };
        let mut total = T::zero();
        for &(term, count) in query {
            let doc_mass: T = docs.iter().map(|&d| self.p_term_doc(d as usize, term)).sum();
            let mixture = (T::one() - lambda) * doc_mass + lambda * self.p_term(term);
            if mixture <= T::zero() {
                return T::neg_infinity();
            }
            total += count * mixture.ln();
        }
        total
    }

    fn doc_log_likelihood(&self, doc: usize, query: &[(Option<u32>, T)]) -> T {
        let len = T::from_u64(self.doc_lengths[doc]).expect("fits");
        let denom = self.avg_doc_length + len;
        let lambda = if denom == T::zero() { T::one() } else { self.avg_doc_length / denom };
        let mut total = T::zero();
        for &(term, count) in query {
            let mixture = (T::one() - lambda) * self.p_term_doc(doc, term) + lambda * self.p_term(term);
            if mixture <= T::zero() {
                return T::neg_infinity();
            }
            total += count * mixture.ln();
        }
        total
    }

    fn document_score(&self, expert: usize, query: &[(Option<u32>, T)]) -> T {
        let per_doc: Vec<T> = self.associations[expert]
            .iter()
            .map(|&d| self.doc_log_likelihood(d as usize, query))
            .collect();
        log_sum_exp(&per_doc)
    }

    pub fn score_candidate_based(&self, query_terms: &[String], expert: &str) -> Result<T, LmError> {
        let e = self.expert_ord(expert).ok_or_else(|| LmError::UnknownExpert(expert.to_owned()))?;
        Ok(self.candidate_score(e, &self.query_counts(query_terms)?))
    }

    pub fn score_document_based(&self, query_terms: &[String], expert: &str) -> Result<T, LmError> {
        let e = self.expert_ord(expert).ok_or_else(|| LmError::UnknownExpert(expert.to_owned()))?;
        Ok(self.document_score(e, &self.query_counts(query_terms)?))
    }

    /// Smoothed query log-likelihood of a single document.
    pub fn document_log_likelihood(&self, query_terms: &[String], doc_id: &str) -> Result<Option<T>, LmError> {
        let q = self.query_counts(query_terms)?;
        Ok(self.doc_ord(doc_id).map(|d| self.doc_log_likelihood(d, &q)))
    }

    /// Scores every expert and returns the top `k`, excluding experts with
    /// a score of negative infinity.
    pub fn rank_experts(&self, query_terms: &[String], method: ExpertMethod, k: usize) -> Result<ExpertRanking<T>, LmError> {
        if k == 0 {
            return Err(LmError::InvalidK);
        }
        let q = self.query_counts(query_terms)?;
        let scored: Vec<(String, T)> = (0..self.experts.len())
            .map(|e| {
                let s = match method {
                    ExpertMethod::Candidate => self.candidate_score(e, &q),
                    ExpertMethod::Document => self.document_score(e, &q),
                };
                (e, s)
            })
            .filter(|(_, s)| s.is_finite())
            .map(|(e, s)| (self.experts[e].clone(), s))
            .collect();
        let mut ranking = ExpertRanking::from_unsorted(scored);
        ranking.truncate(k);
        Ok(ranking)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(LM_MAGIC);
        w.u32(FORMAT_VERSION);
        write_config(&mut w, &self.config);
        w.u64(self.terms.len() as u64);
        for t in &self.terms {
            w.str(t);
        }
        w.u64(self.doc_ids.len() as u64);
        for (d, id) in self.doc_ids.iter().enumerate() {
            w.str(id);
            w.str(&self.experts[self.doc_expert[d] as usize]);
            w.len_u32(self.doc_terms[d].len());
            for &(t, c) in &self.doc_terms[d] {
                w.u32(t);
                w.u32(c);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LmError> {
        let mut r = Reader::expect_magic(bytes, LM_MAGIC)?;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CodecError::Malformed(format!("unsupported SQL1 version {version}")).into());
        }
        let config = read_config(&mut r)?;
        let n_terms = r.u64()? as usize;
        let terms = (0..n_terms).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
        let n_docs = r.u64()? as usize;
        let mut docs = Vec::with_capacity(n_docs.min(1 << 20));
        for _ in 0..n_docs {
            let id = r.string()?;
            let expert = r.string()?;
            let n = r.len()?;
            let mut counts = Vec::with_capacity(n.min(n_terms));
            for _ in 0..n {
                let (t, c) = (r.u32()?, r.u32()?);
                if t as usize >= n_terms || c == 0 {
                    return Err(CodecError::Malformed(format!("bad term entry in {id:?}")).into());
                }
                counts.push((t, c));
            }
            if counts.windows(2).any(|w: &[(u32, u32)]| w[0].0 >= w[1].0) {
                return Err(CodecError::Malformed(format!("unsorted terms in {id:?}")).into());
            }
            docs.push((id, expert, counts));
        }
        r.finish()?;
        if docs.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(CodecError::Malformed("doc table not strictly sorted".into()).into());
        }
        Ok(Self::from_parts(config, terms, docs))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LmError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LmError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.background_counts.iter().sum::<u64>() != self.total_tokens {
            return Err("background counts do not sum to total_tokens".into());
        }
        for (d, counts) in self.doc_terms.iter().enumerate() {
            if self.doc_lengths[d] == 0 {
                continue;
            }
            let mass: f64 = counts
                .iter()
                .map(|&(t, _)| self.p_term_doc(d, Some(t)).as_f64())
                .sum();
            if (mass - 1.0).abs() > 1e-9 {
                return Err(format!("p(t|d) for {} sums to {mass}", self.doc_ids[d]));
            }
        }
        let occurrences: usize = self.associations.iter().map(Vec::len).sum();
        if occurrences != self.doc_ids.len() {
            return Err("every document must be attributed to exactly one expert".into());
        }
        Ok(())
    }
}

pub fn build_lm_stats<T: Scalar>(docs: Vec<AttributedDoc>, config: TokenizerConfig) -> Result<LmStats<T>, LmError> {
    LmStats::build(docs, config)
}
