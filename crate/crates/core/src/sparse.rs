//! Inverted index with BM25 ranking.
//!
//! ```text
//! score(d, q) = sum over query tokens t of
//!     idf(t) * tf(t,d) * (k1 + 1) / (tf(t,d) + k1 * (1 - b + b * |d| / avgdl))
//! idf(t) = ln(1 + (N - df(t) + 0.5) / (df(t) + 0.5))
//! ```
//!
//! Repeated query tokens contribute once per occurrence. Snapshot layout
//! (`SQI1`) is described in `docs/formats.md`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::scalar::Scalar;
use crate::tokenizer::TokenizerConfig;

pub const SPARSE_MAGIC: &[u8; 4] = b"SQI1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
    #[error("query has no terms after tokenization")]
    EmptyQuery,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params<T> {
    pub k1: T,
    pub b: T,
}

impl<T: Scalar> Default for Bm25Params<T> {
    fn default() -> Self {
        Bm25Params {
            k1: T::lit(0.9),
            b: T::lit(0.4),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Ordinal into the index's doc table; ordinals follow doc_id order.
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseIndex<T: Scalar> {
    config: TokenizerConfig,
    params: Bm25Params<T>,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: T,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl<T: Scalar> SparseIndex<T> {
    pub fn build<I, D, S>(docs: I, config: TokenizerConfig) -> Result<Self, SparseError>
    where
        I: IntoIterator<Item = (D, S)>,
        D: Into<String>,
        S: AsRef<str>,
    {
        Self::build_with_params(docs, config, Bm25Params::default())
    }

    pub fn build_with_params<I, D, S>(
        docs: I,
        config: TokenizerConfig,
        params: Bm25Params<T>,
    ) -> Result<Self, SparseError>
    where
        I: IntoIterator<Item = (D, S)>,
        D: Into<String>,
        S: AsRef<str>,
    {
        let mut analyzed: Vec<(String, Vec<String>)> = docs
            .into_iter()
            .map(|(id, text)| (id.into(), config.tokenize(text.as_ref())))
            .collect();
        analyzed.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = analyzed.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(SparseError::DuplicateDocId(w[0].0.clone()));
        }

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_ids = Vec::with_capacity(analyzed.len());
        let mut doc_lengths = Vec::with_capacity(analyzed.len());
        for (ord, (id, terms)) in analyzed.into_iter().enumerate() {
            let mut tf: HashMap<&str, u32> = HashMap::new();
            for t in &terms {
                *tf.entry(t.as_str()).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings.entry(term.to_owned()).or_default().push(Posting {
                    doc: ord as u32,
                    tf: count,
                });
            }
            doc_ids.push(id);
            doc_lengths.push(terms.len() as u32);
        }
        let avg_doc_length = mean_length(&doc_lengths);
        Ok(SparseIndex {
            config,
            params,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            postings,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> T {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params<T> {
        self.params
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.ordinal(doc_id).map(|o| self.doc_lengths[o])
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn n_terms(&self) -> usize {
        self.postings.len()
    }

    fn ordinal(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|d| d.as_str().cmp(doc_id)).ok()
    }

    pub fn idf(&self, term: &str) -> T {
        let n = T::from_count(self.n_docs());
        let df = T::from_count(self.postings(term).len());
        let half = T::lit(0.5);
        (T::one() + (n - df + half) / (df + half)).ln()
    }

    /// Top-`k` documents with positive score, by descending score then
    /// ascending doc_id.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<(String, T)>, SparseError> {
        let terms = self.config.tokenize(query);
        self.search_terms(&terms, k)
    }

    pub fn search_terms(&self, terms: &[String], k: usize) -> Result<Vec<(String, T)>, SparseError> {
        if terms.is_empty() {
            return Err(SparseError::EmptyQuery);
        }
        let mut multiplicity: Vec<(&str, usize)> = Vec::new();
        for t in terms {
            match multiplicity.iter_mut().find(|(s, _)| *s == t.as_str()) {
                Some((_, c)) => *c += 1,
                None => multiplicity.push((t.as_str(), 1)),
            }
        }
        let Bm25Params { k1, b } = self.params;
        let mut scores = vec![T::zero(); self.n_docs()];
        let mut touched = Vec::new();
        for (term, count) in multiplicity {
            let postings = self.postings(term);
            if postings.is_empty() {
                continue;
            }
            let weight = self.idf(term) * T::from_count(count);
            for p in postings {
                let tf = T::from_count(p.tf as usize);
                let len = T::from_count(self.doc_lengths[p.doc as usize] as usize);
                let norm = k1 * (T::one() - b + b * len / self.avg_doc_length);
                let slot = &mut scores[p.doc as usize];
                if *slot == T::zero() {
                    touched.push(p.doc as usize);
                }
                *slot += weight * tf * (k1 + T::one()) / (tf + norm);
            }
        }
        let mut hits: Vec<(usize, T)> = touched
            .into_iter()
            .map(|d| (d, scores[d]))
            .filter(|(_, s)| *s > T::zero())
            .collect();
        hits.sort_by(|a, b| a.1.total_cmp_desc(&b.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .map(|(d, s)| (self.doc_ids[d].clone(), s))
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(SPARSE_MAGIC);
        w.u32(FORMAT_VERSION);
        w.f64(self.params.k1.as_f64());
        w.f64(self.params.b.as_f64());
        write_config(&mut w, &self.config);
        w.u64(self.doc_ids.len() as u64);
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            w.str(id);
            w.u32(*len);
        }
        w.f64(self.avg_doc_length.as_f64());
        w.u64(self.postings.len() as u64);
        for (term, list) in &self.postings {
            w.str(term);
            w.len_u32(list.len());
            for p in list {
                w.u32(p.doc);
                w.u32(p.tf);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SparseError> {
        let mut r = Reader::expect_magic(bytes, SPARSE_MAGIC)?;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CodecError::Malformed(format!("unsupported SQI1 version {version}")).into());
        }
        let params = Bm25Params {
            k1: T::lit(r.f64()?),
            b: T::lit(r.f64()?),
        };
        let config = read_config(&mut r)?;
        let n_docs = r.u64()? as usize;
        let mut doc_ids = Vec::with_capacity(n_docs.min(1 << 20));
        let mut doc_lengths = Vec::with_capacity(n_docs.min(1 << 20));
        for _ in 0..n_docs {
            doc_ids.push(r.string()?);
            doc_lengths.push(r.u32()?);
        }
        if doc_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CodecError::Malformed("doc table not strictly sorted".into()).into());
        }
        let avg_doc_length = T::lit(r.f64()?);
        let n_terms = r.u64()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let term = r.string()?;
            let n = r.len()?;
            let mut list = Vec::with_capacity(n.min(n_docs));
            for _ in 0..n {
                let p = Posting { doc: r.u32()?, tf: r.u32()? };
                if p.doc as usize >= n_docs || p.tf == 0 {
                    return Err(CodecError::Malformed(format!("bad posting for {term:?}")).into());
                }
                list.push(p);
            }
            if list.windows(2).any(|w| w[0].doc >= w[1].doc) {
                return Err(CodecError::Malformed(format!("unsorted postings for {term:?}")).into());
            }
            postings.insert(term, list);
        }
        r.finish()?;
        Ok(SparseIndex {
            config,
            params,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            postings,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SparseError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SparseError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Checks the structural invariants; returns a description of the
    /// first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.doc_lengths.len() != self.doc_ids.len() {
            return Err("doc table length mismatch".into());
        }
        let mean = mean_length::<f64>(&self.doc_lengths);
        if (mean - self.avg_doc_length.as_f64()).abs() > 1e-9 * mean.max(1.0) {
            return Err(format!("avg_doc_length {} != mean {mean}", self.avg_doc_length));
        }
        for (term, list) in &self.postings {
            if list.is_empty() || list.windows(2).any(|w| w[0].doc >= w[1].doc) {
                return Err(format!("postings for {term:?} empty or unsorted"));
            }
        }
        Ok(())
    }
}

fn mean_length<T: Scalar>(lengths: &[u32]) -> T {
    if lengths.is_empty() {
        return T::zero();
    }
    let total: u64 = lengths.iter().map(|&l| l as u64).sum();
    T::from_u64(total).expect("total fits") / T::from_count(lengths.len())
}

pub(crate) fn write_config(w: &mut Writer, config: &TokenizerConfig) {
    w.u8(config.lowercase as u8);
    w.u8(config.stemming as u8);
    w.len_u32(config.stopwords.len());
    for s in &config.stopwords {
        w.str(s);
    }
}

pub(crate) fn read_config(r: &mut Reader<'_>) -> Result<TokenizerConfig, CodecError> {
    let lowercase = r.bool()?;
    let stemming = r.bool()?;
    let n = r.len()?;
    let mut stopwords = std::collections::BTreeSet::new();
    for _ in 0..n {
        stopwords.insert(r.string()?);
    }
    Ok(TokenizerConfig {
        lowercase,
        stopwords,
        stemming,
    })
}

pub fn build_sparse<T: Scalar>(
    docs: &[(String, String)],
    config: TokenizerConfig,
) -> Result<SparseIndex<T>, SparseError> {
    SparseIndex::build(docs.iter().map(|(d, t)| (d.clone(), t.as_str())), config)
}

pub fn search_sparse<T: Scalar>(
    index: &SparseIndex<T>,
    query_text: &str,
    k: usize,
) -> Result<Vec<(String, T)>, SparseError> {
    index.search(query_text, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain() -> TokenizerConfig {
        TokenizerConfig::plain()
    }

    fn docs(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn counts_and_average_length() {
        let idx: SparseIndex<f64> =
            build_sparse(&docs(&[("d1", "flu vaccine works"), ("d2", "vaccine trial ends")]), plain()).unwrap();
        assert_eq!(idx.n_docs(), 2);
        assert_eq!(idx.avg_doc_length(), 3.0);
        let p = idx.postings("vaccine");
        assert_eq!(p.len(), 2);
        assert!(p[0].doc < p[1].doc);
        idx.check_invariants().unwrap();
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r: Result<SparseIndex<f64>, _> = build_sparse(&docs(&[("d", "a"), ("d", "b")]), plain());
        assert!(matches!(r, Err(SparseError::DuplicateDocId(id)) if id == "d"));
    }

    #[test]
    fn single_hit_scores_ln_two() {
        // N=2, df=1, tf=1, |d| = avgdl: the tf factor is 1, idf = ln(1 + 1.5/1.5)
        let idx: SparseIndex<f64> =
            build_sparse(&docs(&[("d1", "flu vaccine works"), ("d2", "markets fell today")]), plain()).unwrap();
        let hits = idx.search("vaccine", 10).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, "d1");
        assert!((hits[0].1 - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn absent_term_and_empty_query() {
        let idx: SparseIndex<f64> = build_sparse(&docs(&[("d1", "flu vaccine works")]), plain()).unwrap();
        assert!(idx.search("zebra", 10).unwrap().is_empty());
        assert!(matches!(idx.search(" , ", 10), Err(SparseError::EmptyQuery)));
    }

    #[test]
    fn ties_broken_by_doc_id() {
        let idx: SparseIndex<f32> = build_sparse(
            &docs(&[("b", "same text here"), ("a", "same text here"), ("c", "other words only")]),
            plain(),
        )
        .unwrap();
        let hits = idx.search("text", 10).unwrap();
        assert_eq!(hits.iter().map(|h| h.0.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(hits[0].1, hits[1].1);
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let idx: SparseIndex<f64> = build_sparse(
            &docs(&[("d1", "The flu vaccine works"), ("d2", "Markets fell on vaccine news")]),
            TokenizerConfig::english(),
        )
        .unwrap();
        let bytes = idx.to_bytes();
        assert_eq!(&bytes[..4], b"SQI1");
        let back = SparseIndex::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.to_bytes(), bytes);
        assert!(matches!(
            SparseIndex::<f64>::from_bytes(&bytes[..bytes.len() - 3]),
            Err(SparseError::Codec(CodecError::Truncated { .. }))
        ));
    }
}
