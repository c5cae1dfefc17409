//! Dense nearest-neighbour retrieval over precomputed document embeddings:
//! an exact flat scan and a hierarchical navigable small-world graph.
//!
//! Similarity is the inner product; stores loaded with normalization give
//! cosine similarity. Vectors are read from `SQV1` files (see
//! `docs/formats.md`).

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::scalar::Scalar;

pub const VECTOR_MAGIC: &[u8; 4] = b"SQV1";
const HEADER_LEN: usize = 4 + 4 + 8 + 8;
pub const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("bad magic bytes, not an SQV1 vector file")]
    BadMagic,
    #[error("vector file truncated: {0}")]
    TruncatedFile(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("cannot normalize zero vector for {0:?}")]
    NormalizationError(String),
    #[error("vector store is empty")]
    EmptyStore,
    #[error("invalid parameter: {0}")]
    ParameterError(String),
    #[error("malformed vector file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<CodecError> for DenseError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::BadMagic { .. } => DenseError::BadMagic,
            CodecError::Truncated { .. } => DenseError::TruncatedFile(e.to_string()),
            other => DenseError::Malformed(other.to_string()),
        }
    }
}

/// `n × dim` vectors in row-major order with one identifier per row.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore<T: Scalar> {
    dim: usize,
    data: Vec<T>,
    doc_ids: Vec<String>,
    normalized: bool,
    model: String,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn l2_normalize<T: Scalar>(v: &mut [T]) -> bool {
    let norm = dot(v, v).sqrt();
    if norm == T::zero() || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

impl<T: Scalar> VectorStore<T> {
    pub fn new(dim: usize, doc_ids: Vec<String>, data: Vec<T>) -> Result<Self, DenseError> {
        if dim == 0 {
            return Err(DenseError::ParameterError("dim must be positive".into()));
        }
        if data.len() != dim * doc_ids.len() {
            return Err(DenseError::DimMismatch {
                expected: dim * doc_ids.len(),
                found: data.len(),
            });
        }
        Ok(VectorStore {
            dim,
            data,
            doc_ids,
            normalized: false,
            model: String::new(),
        })
    }

    pub fn from_rows(doc_ids: Vec<String>, rows: &[Vec<T>]) -> Result<Self, DenseError> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(DenseError::DimMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(dim, doc_ids, rows.concat())
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    /// L2-normalizes every vector in place.
    pub fn normalize(mut self) -> Result<Self, DenseError> {
        let dim = self.dim;
        for (i, row) in self.data.chunks_mut(dim).enumerate() {
            if !l2_normalize(row) {
                return Err(DenseError::NormalizationError(self.doc_ids[i].clone()));
            }
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn vector(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == doc_id)
    }

    /// Validates the query's dimension and normalizes it when the store is
    /// normalized.
    fn prepare_query(&self, query: &[T]) -> Result<Vec<T>, DenseError> {
        if query.len() != self.dim {
            return Err(DenseError::DimMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        let mut q = query.to_vec();
        if self.normalized && !l2_normalize(&mut q) {
            return Err(DenseError::NormalizationError("<query>".into()));
        }
        Ok(q)
    }

    /// Exact top-`k` by inner product, ties by ascending doc_id.
    pub fn search_flat(&self, query: &[T], k: usize) -> Result<Vec<(String, T)>, DenseError> {
        let q = self.prepare_query(query)?;
        let mut scored: Vec<(usize, T)> = (0..self.len()).map(|i| (i, dot(self.vector(i), &q))).collect();
        Ok(self.rank(&mut scored, k))
    }

    fn rank(&self, scored: &mut Vec<(usize, T)>, k: usize) -> Vec<(String, T)> {
        scored.sort_by(|a, b| {
            a.1.total_cmp_desc(&b.1)
                .then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        });
        scored.truncate(k);
        scored.iter().map(|&(i, s)| (self.doc_ids[i].clone(), s)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(VECTOR_MAGIC);
        w.u32(self.dim as u32);
        w.u64(self.len() as u64);
        let offset_at = w.position();
        w.u64(0);
        for &x in &self.data {
            w.f32(x.to_f32().expect("component converts to f32"));
        }
        let table = w.position() as u64;
        w.patch_u64(offset_at, table);
        w.str(&self.model);
        for id in &self.doc_ids {
            w.str(id);
        }
        w.finish()
    }

    /// Parses an `SQV1` payload, optionally L2-normalizing every vector.
    /// Files without a name table get ordinal ids `"0"`, `"1"`, ...
    pub fn from_bytes(bytes: &[u8], normalize: bool) -> Result<Self, DenseError> {
        let mut r = Reader::expect_magic(bytes, VECTOR_MAGIC)?;
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let table_offset = r.u64()? as usize;
        if dim == 0 && count > 0 {
            return Err(DenseError::DimMismatch { expected: 1, found: 0 });
        }
        let payload = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| DenseError::Malformed("vector payload size overflows".into()))?;
        let payload_end = HEADER_LEN + payload;
        if table_offset != 0 && table_offset != payload_end {
            return Err(DenseError::DimMismatch {
                expected: dim,
                found: (table_offset.saturating_sub(HEADER_LEN) / 4) / count.max(1),
            });
        }
        if bytes.len() < payload_end {
            return Err(DenseError::TruncatedFile(format!(
                "expected {} vector bytes, found {}",
                payload,
                bytes.len() - HEADER_LEN
            )));
        }
        let mut data = Vec::with_capacity(count * dim);
        for _ in 0..count * dim {
            data.push(T::from_f32(r.f32()?).expect("f32 converts"));
        }
        let (model, doc_ids) = if table_offset == 0 {
            if r.remaining() != 0 {
                return Err(DenseError::DimMismatch {
                    expected: dim,
                    found: (bytes.len() - HEADER_LEN) / 4 / count.max(1),
                });
            }
            (String::new(), (0..count).map(|i| i.to_string()).collect())
        } else {
            let model = r.string()?;
            let ids = (0..count).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
            r.finish()?;
            (model, ids)
        };
        let store = VectorStore::new(dim.max(1), doc_ids, data)?.with_model(model);
        if normalize {
            store.normalize()
        } else {
            Ok(store)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DenseError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

pub fn load_vectors<T: Scalar>(path: impl AsRef<Path>, normalize: bool) -> Result<VectorStore<T>, DenseError> {
    VectorStore::from_bytes(&std::fs::read(path)?, normalize)
}

pub fn search_flat<T: Scalar>(
    store: &VectorStore<T>,
    query: &[T],
    k: usize,
) -> Result<Vec<(String, T)>, DenseError> {
    store.search_flat(query, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct HnswParams {
    /// Maximum neighbours per node on layers above 0; layer 0 allows `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub seed: u64,
    /// Fill neighbour lists up to the degree bound with candidates the
    /// selection heuristic discarded.
    pub keep_pruned: bool,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            seed: 0,
            keep_pruned: true,
        }
    }
}

/// Search candidate ordered by distance, then node id.
#[derive(Debug, Clone, Copy)]
struct Candidate<T> {
    dist: T,
    id: u32,
}

impl<T: Scalar> PartialEq for Candidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Candidate<T> {}

impl<T: Scalar> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .as_f64()
            .total_cmp(&other.dist.as_f64())
            .then(self.id.cmp(&other.id))
    }
}

/// Generation-stamped visited set, reusable across searches.
struct Visited {
    stamp: Vec<u32>,
    current: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Visited {
            stamp: vec![0; n],
            current: 0,
        }
    }

    fn reset(&mut self) {
        self.current = self.current.wrapping_add(1);
        if self.current == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.current = 1;
        }
    }

    /// Marks `i`; returns false if it was already marked.
    fn insert(&mut self, i: u32) -> bool {
        let slot = &mut self.stamp[i as usize];
        if *slot == self.current {
            false
        } else {
            *slot = self.current;
            true
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex<T: Scalar> {
    store: VectorStore<T>,
    params: HnswParams,
    /// `links[node][layer]` for layers `0..=level(node)`.
    links: Vec<Vec<Vec<u32>>>,
    entry_point: u32,
    max_level: usize,
}

impl<T: Scalar> HnswIndex<T> {
    pub fn build(store: VectorStore<T>, params: HnswParams) -> Result<Self, DenseError> {
        if store.is_empty() {
            return Err(DenseError::EmptyStore);
        }
        if params.m < 2 {
            return Err(DenseError::ParameterError(format!("M must be at least 2, got {}", params.m)));
        }
        if params.ef_construction == 0 {
            return Err(DenseError::ParameterError("ef_construction must be positive".into()));
        }
        let n = store.len();
        let level_mult = 1.0 / (params.m as f64).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut index = HnswIndex {
            store,
            params,
            links: Vec::with_capacity(n),
            entry_point: 0,
            max_level: 0,
        };
        let mut visited = Visited::new(n);
        for node in 0..n {
            let u: f64 = 1.0 - rng.random::<f64>();
            let level = (-u.ln() * level_mult).floor() as usize;
            index.insert(node as u32, level, &mut visited);
        }
        Ok(index)
    }

    fn distance(&self, a: &[T], node: u32) -> T {
        -dot(a, self.store.vector(node as usize))
    }

    fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn insert(&mut self, node: u32, level: usize, visited: &mut Visited) {
        self.links.push(vec![Vec::new(); level + 1]);
        if node == 0 {
            self.entry_point = 0;
            self.max_level = level;
            return;
        }
        let query = self.store.vector(node as usize).to_vec();
        let mut entry = Candidate {
            dist: self.distance(&query, self.entry_point),
            id: self.entry_point,
        };
        for layer in (level + 1..=self.max_level).rev() {
            entry = self.greedy_closest(&query, entry, layer);
        }
        let mut entries = vec![entry];
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&query, &entries, self.params.ef_construction, layer, visited);
            let neighbours = self.select_neighbours(&found, self.params.m);
            self.links[node as usize][layer] = neighbours.iter().map(|c| c.id).collect();
            for c in &neighbours {
                self.connect(c.id, node, layer);
            }
            entries = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry_point = node;
        }
    }

    /// Adds `to` to `from`'s adjacency on `layer`, pruning with the
    /// neighbour-selection heuristic when the degree bound is exceeded.
    fn connect(&mut self, from: u32, to: u32, layer: usize) {
        let cap = self.max_degree(layer);
        let list = &self.links[from as usize][layer];
        if list.contains(&to) {
            return;
        }
        if list.len() < cap {
            self.links[from as usize][layer].push(to);
            return;
        }
        let base = self.store.vector(from as usize).to_vec();
        let mut candidates: Vec<Candidate<T>> = list
            .iter()
            .chain(std::iter::once(&to))
            .map(|&id| Candidate {
                dist: self.distance(&base, id),
                id,
            })
            .collect();
        candidates.sort();
        let kept = self.select_neighbours(&candidates, cap);
        self.links[from as usize][layer] = kept.into_iter().map(|c| c.id).collect();
    }

    /// Keeps a candidate only if it is closer to the base than to every
    /// neighbour already kept. `sorted` must be in ascending distance.
    fn select_neighbours(&self, sorted: &[Candidate<T>], m: usize) -> Vec<Candidate<T>> {
        let mut kept: Vec<Candidate<T>> = Vec::with_capacity(m);
        let mut pruned = Vec::new();
        for &c in sorted {
            if kept.len() >= m {
                break;
            }
            let v = self.store.vector(c.id as usize);
            if kept.iter().all(|k| self.distance(v, k.id) > c.dist) {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        if self.params.keep_pruned {
            let room = m - kept.len();
            kept.extend(pruned.into_iter().take(room));
        }
        kept
    }

    fn greedy_closest(&self, query: &[T], mut best: Candidate<T>, layer: usize) -> Candidate<T> {
        loop {
            let mut improved = false;
            for &nb in &self.links[best.id as usize][layer] {
                let c = Candidate {
                    dist: self.distance(query, nb),
                    id: nb,
                };
                if c < best {
                    best = c;
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }

    /// Best-first beam search on one layer; returns up to `ef` candidates
    /// in ascending distance.
    fn search_layer(
        &self,
        query: &[T],
        entries: &[Candidate<T>],
        ef: usize,
        layer: usize,
        visited: &mut Visited,
    ) -> Vec<Candidate<T>> {
        visited.reset();
        let mut frontier: BinaryHeap<Reverse<Candidate<T>>> = BinaryHeap::new();
        let mut results: BinaryHeap<Candidate<T>> = BinaryHeap::new();
        for &e in entries {
            if visited.insert(e.id) {
                frontier.push(Reverse(e));
                results.push(e);
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(Reverse(current)) = frontier.pop() {
            let worst = results.peek().expect("results non-empty");
            if current > *worst && results.len() >= ef {
                break;
            }
            for &nb in &self.links[current.id as usize][layer] {
                if !visited.insert(nb) {
                    continue;
                }
                let c = Candidate {
                    dist: self.distance(query, nb),
                    id: nb,
                };
                if results.len() < ef || c < *results.peek().expect("non-empty") {
                    frontier.push(Reverse(c));
                    results.push(c);
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        results.into_sorted_vec()
    }

    /// Layered greedy descent followed by a beam of width `ef_search` on
    /// layer 0. Results are ordered like [`VectorStore::search_flat`].
    pub fn search(&self, query: &[T], k: usize, ef_search: usize) -> Result<Vec<(String, T)>, DenseError> {
        if ef_search < k {
            return Err(DenseError::ParameterError(format!(
                "ef_search ({ef_search}) must be at least k ({k})"
            )));
        }
        let q = self.store.prepare_query(query)?;
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut entry = Candidate {
            dist: self.distance(&q, self.entry_point),
            id: self.entry_point,
        };
        for layer in (1..=self.max_level).rev() {
            entry = self.greedy_closest(&q, entry, layer);
        }
        let mut visited = Visited::new(self.store.len());
        let found = self.search_layer(&q, &[entry], ef_search, 0, &mut visited);
        let mut scored: Vec<(usize, T)> = found.into_iter().map(|c| (c.id as usize, -c.dist)).collect();
        Ok(self.store.rank(&mut scored, k))
    }

    pub fn store(&self) -> &VectorStore<T> {
        &self.store
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn entry_point(&self) -> &str {
        &self.store.doc_ids[self.entry_point as usize]
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn level(&self, node: usize) -> usize {
        self.links[node].len() - 1
    }

    pub fn neighbours(&self, node: usize, layer: usize) -> &[u32] {
        self.links[node].get(layer).map_or(&[], Vec::as_slice)
    }

    /// Degree bounds, edge validity and layer membership. Returns the first
    /// violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.store.len();
        for (node, layers) in self.links.iter().enumerate() {
            for (layer, list) in layers.iter().enumerate() {
                if list.len() > self.max_degree(layer) {
                    return Err(format!("node {node} layer {layer}: degree {}", list.len()));
                }
                for &nb in list {
                    if nb as usize >= n || nb as usize == node {
                        return Err(format!("node {node} layer {layer}: bad edge {nb}"));
                    }
                    if self.links[nb as usize].len() <= layer {
                        return Err(format!("node {node} links to {nb} above its level"));
                    }
                }
                let mut sorted = list.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != list.len() {
                    return Err(format!("node {node} layer {layer}: duplicate edge"));
                }
            }
        }
        if self.links[self.entry_point as usize].len() != self.max_level + 1 {
            return Err("entry point is not on the top layer".into());
        }
        Ok(())
    }
}

pub fn build_hnsw<T: Scalar>(store: VectorStore<T>, params: HnswParams) -> Result<HnswIndex<T>, DenseError> {
    HnswIndex::build(store, params)
}

pub fn search_hnsw<T: Scalar>(
    index: &HnswIndex<T>,
    query: &[T],
    k: usize,
    ef_search: usize,
) -> Result<Vec<(String, T)>, DenseError> {
    index.search(query, k, ef_search)
}
