//! On-disk index directory and the immutable set loaded from it.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use quotesource::dense::{load_vectors, HnswParams};
use quotesource::recommender::{form_document, DEFAULT_EF_SEARCH};
use quotesource::{DocSpec, HnswIndex, LmStats, Method, QuoteRecord, RetrievalSet, SparseIndex};
use serde::{Deserialize, Serialize};

pub const SPARSE_FILE: &str = "sparse.sqi";
pub const LM_FILE: &str = "lm.sql";
pub const DENSE_FILE: &str = "dense.sqv";
pub const DENSE_META_FILE: &str = "dense.json";
pub const QUERY_VECTORS_FILE: &str = "queries.sqv";
pub const DOCUMENTS_FILE: &str = "documents.jsonl";

/// One indexed document as recorded next to the indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentEntry {
    pub doc_id: String,
    pub expert: String,
    pub surface: String,
    pub quote: String,
    pub text: String,
}

impl DocumentEntry {
    pub fn from_record(record: &QuoteRecord, spec: DocSpec) -> Self {
        let (doc_id, text) = form_document(record, spec);
        DocumentEntry {
            doc_id,
            expert: record.source_entity.clone(),
            surface: record.source_surface.clone(),
            quote: record.quote.clone(),
            text,
        }
    }
}

/// Settings stored beside the dense vectors; the graph is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMeta {
    pub normalize: bool,
    pub hnsw: HnswParams,
    pub ef_search: usize,
    pub model: String,
    pub count: usize,
}

impl Default for DenseMeta {
    fn default() -> Self {
        DenseMeta {
            normalize: true,
            hnsw: HnswParams::default(),
            ef_search: DEFAULT_EF_SEARCH,
            model: String::new(),
            count: 0,
        }
    }
}

pub fn write_documents(dir: &Path, entries: &[DocumentEntry]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(DOCUMENTS_FILE);
    let mut out = BufWriter::new(File::create(&path).with_context(|| format!("writing {}", path.display()))?);
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_documents(dir: &Path) -> Result<Vec<DocumentEntry>> {
    let path = dir.join(DOCUMENTS_FILE);
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

/// Everything a search needs. Never mutated once built; reloads replace
/// the whole set.
#[derive(Debug)]
pub struct IndexSet {
    pub retrieval: RetrievalSet,
    pub documents: HashMap<String, DocumentEntry>,
    pub by_expert: HashMap<String, Vec<String>>,
}

impl IndexSet {
    pub fn from_parts(entries: Vec<DocumentEntry>, mut retrieval: RetrievalSet) -> Self {
        let mut by_expert: HashMap<String, Vec<String>> = HashMap::new();
        retrieval.doc_source = entries.iter().map(|e| (e.doc_id.clone(), e.expert.clone())).collect();
        for e in &entries {
            by_expert.entry(e.expert.clone()).or_default().push(e.doc_id.clone());
        }
        for docs in by_expert.values_mut() {
            docs.sort();
        }
        IndexSet {
            retrieval,
            documents: entries.into_iter().map(|e| (e.doc_id.clone(), e)).collect(),
            by_expert,
        }
    }

    /// Loads whichever indices exist in `dir`. Only the document table is
    /// mandatory.
    pub fn load(dir: &Path) -> Result<Self> {
        let entries = read_documents(dir)?;
        let mut set = RetrievalSet::default();
        let sparse = dir.join(SPARSE_FILE);
        if sparse.exists() {
            set.sparse = Some(SparseIndex::load(&sparse).with_context(|| format!("loading {}", sparse.display()))?);
        }
        let lm = dir.join(LM_FILE);
        if lm.exists() {
            set.lm = Some(LmStats::load(&lm).with_context(|| format!("loading {}", lm.display()))?);
        }
        let dense = dir.join(DENSE_FILE);
        if dense.exists() {
            let meta: DenseMeta = match std::fs::read_to_string(dir.join(DENSE_META_FILE)) {
                Ok(s) => serde_json::from_str(&s).context("parsing dense.json")?,
                Err(_) => DenseMeta::default(),
            };
            let store = load_vectors(&dense, meta.normalize).with_context(|| format!("loading {}", dense.display()))?;
            set.hnsw = Some(HnswIndex::build(store.clone(), meta.hnsw)?);
            set.vectors = Some(store);
            set.ef_search = meta.ef_search;
            let queries = dir.join(QUERY_VECTORS_FILE);
            if queries.exists() {
                set.query_vectors = Some(load_vectors(&queries, meta.normalize)?);
            }
        }
        let known: std::collections::HashSet<&str> = entries.iter().map(|e| e.doc_id.as_str()).collect();
        if let Some(store) = &set.vectors {
            if let Some(id) = store.doc_ids().iter().find(|id| !known.contains(id.as_str())) {
                bail!("dense vector {id:?} has no entry in {DOCUMENTS_FILE}");
            }
        }
        Ok(IndexSet::from_parts(entries, set))
    }

    /// Method name to readiness.
    pub fn readiness(&self) -> BTreeMap<&'static str, bool> {
        Method::ALL.into_iter().map(|m| (m.as_str(), self.retrieval.supports(m))).collect()
    }
}
