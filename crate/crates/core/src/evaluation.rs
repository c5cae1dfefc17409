//! Extraction metrics (exact match, token F1) and ranking metrics (AP,
//! NDCG@k) under strict and cluster-relaxed relevance.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::Serialize;
use thiserror::Error;

use crate::kmeans::{kmeans, KMeansConfig, KMeansError};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("run query {0:?} has no qrels entry")]
    UnknownQuery(String),
    #[error("relaxed metrics requested without a cluster model")]
    MissingClusterModel,
    #[error("need at least {k} sources with an in-vocabulary category, found {found}")]
    TooFewSources { k: usize, found: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn normalize_answer(text: &str) -> Vec<String> {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_punctuation() || is_unicode_quote(c) { ' ' } else { c })
        .collect();
    lowered
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .map(str::to_owned)
        .collect()
}

fn is_unicode_quote(c: char) -> bool {
    matches!(c, '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}')
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpanScore<T> {
    pub exact_match: bool,
    pub f1: T,
}

/// SQuAD-style exact match and bag-of-tokens F1 after lowercasing and
/// stripping punctuation and articles.
pub fn span_scores<T: Scalar>(prediction: &str, gold: &str) -> SpanScore<T> {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    let exact_match = pred == gold;
    if pred.is_empty() || gold.is_empty() {
        let f1 = if exact_match { T::one() } else { T::zero() };
        return SpanScore { exact_match, f1 };
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for g in &gold {
        *gold_counts.entry(g.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for p in &pred {
        if let Some(c) = gold_counts.get_mut(p.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return SpanScore {
            exact_match,
            f1: T::zero(),
        };
    }
    let precision = T::from_count(overlap) / T::from_count(pred.len());
    let recall = T::from_count(overlap) / T::from_count(gold.len());
    SpanScore {
        exact_match,
        f1: T::lit(2.0) * precision * recall / (precision + recall),
    }
}

/// Macro-averaged exact match and F1 over `(prediction, gold)` pairs.
pub fn extraction_scores<T: Scalar, P: AsRef<str>, G: AsRef<str>>(pairs: &[(P, G)]) -> (T, T) {
    if pairs.is_empty() {
        return (T::zero(), T::zero());
    }
    let mut em = T::zero();
    let mut f1 = T::zero();
    for (p, g) in pairs {
        let s = span_scores::<T>(p.as_ref(), g.as_ref());
        if s.exact_match {
            em += T::one();
        }
        f1 += s.f1;
    }
    let n = T::from_count(pairs.len());
    (em / n, f1 / n)
}

/// Average precision with `|relevant|` in the denominator.
pub fn average_precision<T: Scalar, S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>) -> T {
    let judgments: Vec<bool> = ranked.iter().map(|r| relevant.contains(r.as_ref())).collect();
    ap_from_judgments(&judgments, relevant.len())
}

/// `(1/denominator) * sum over relevant ranks r of hits(r) / r`.
pub fn ap_from_judgments<T: Scalar>(judgments: &[bool], denominator: usize) -> T {
    if denominator == 0 {
        return T::zero();
    }
    let mut hits = 0usize;
    let mut sum = T::zero();
    for (i, &rel) in judgments.iter().enumerate() {
        if rel {
            hits += 1;
            sum += T::from_count(hits) / T::from_count(i + 1);
        }
    }
    sum / T::from_count(denominator)
}

/// Rank 1 is undiscounted, rank `i >= 2` is discounted by `1 / log2(i)`.
fn discount<T: Scalar>(rank: usize) -> T {
    if rank <= 1 {
        T::one()
    } else {
        T::one() / T::from_count(rank).log2()
    }
}

fn ideal_dcg<T: Scalar>(n_relevant: usize, k: usize) -> T {
    (1..=n_relevant.min(k)).map(discount::<T>).sum()
}

/// Binary-gain NDCG@k. The ideal ranking places all `n_relevant` items first.
pub fn ndcg_from_judgments<T: Scalar>(judgments: &[bool], n_relevant: usize, k: usize) -> T {
    let idcg: T = ideal_dcg(n_relevant, k);
    if idcg == T::zero() {
        return T::zero();
    }
    let dcg: T = judgments
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &rel)| rel)
        .map(|(i, _)| discount::<T>(i + 1))
        .sum();
    dcg / idcg
}

pub fn ndcg_at_k<T: Scalar, S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>, k: usize) -> T {
    let judgments: Vec<bool> = ranked.iter().map(|r| relevant.contains(r.as_ref())).collect();
    ndcg_from_judgments(&judgments, relevant.len(), k)
}

/// One strictly relevant expert per query.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    pub relevant: BTreeMap<String, String>,
}

impl Qrels {
    /// `query_id 0 expert_id 1` lines; zero-relevance lines are ignored.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, EvalError> {
        let mut relevant = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 4 {
                return Err(EvalError::Parse {
                    line: i + 1,
                    reason: format!("expected 4 columns, found {}", fields.len()),
                });
            }
            let grade: i64 = fields[3].parse().map_err(|_| EvalError::Parse {
                line: i + 1,
                reason: format!("bad relevance {:?}", fields[3]),
            })?;
            if grade > 0 && relevant.insert(fields[0].to_owned(), fields[2].to_owned()).is_some() {
                return Err(EvalError::Parse {
                    line: i + 1,
                    reason: format!("query {:?} has more than one relevant expert", fields[0]),
                });
            }
        }
        Ok(Qrels { relevant })
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (q, e) in &self.relevant {
            writeln!(out, "{q} 0 {e} 1")?;
        }
        Ok(())
    }
}

/// Ranked experts per query.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Run {
    pub rankings: BTreeMap<String, Vec<String>>,
}

impl Run {
    /// `query_id expert_id rank score tag` lines, ordered by rank per query.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, EvalError> {
        let mut rows: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 5 {
                return Err(EvalError::Parse {
                    line: i + 1,
                    reason: format!("expected 5 columns, found {}", fields.len()),
                });
            }
            let rank: usize = fields[2].parse().map_err(|_| EvalError::Parse {
                line: i + 1,
                reason: format!("bad rank {:?}", fields[2]),
            })?;
            rows.entry(fields[0].to_owned())
                .or_default()
                .push((rank, fields[1].to_owned()));
        }
        let rankings = rows
            .into_iter()
            .map(|(q, mut list)| {
                list.sort();
                (q, list.into_iter().map(|(_, e)| e).collect())
            })
            .collect();
        Ok(Run { rankings })
    }
}

/// Sources clustered by binary category-indicator embeddings. Sources with
/// no in-vocabulary category sit in an overflow cluster with id `k` and are
/// only relaxed-relevant to themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel<T> {
    pub category_vocab: Vec<String>,
    pub centroids: Vec<Vec<T>>,
    pub assignment: BTreeMap<String, usize>,
    pub k: usize,
    pub seed: u64,
}

impl<T: Scalar> ClusterModel<T> {
    pub fn overflow_cluster(&self) -> usize {
        self.k
    }

    pub fn cluster_of(&self, source: &str) -> Option<usize> {
        self.assignment.get(source).copied()
    }

    /// Relaxed relevance of `candidate` for a query whose true source is
    /// `truth`.
    pub fn same_cluster(&self, candidate: &str, truth: &str) -> bool {
        if candidate == truth {
            return true;
        }
        match (self.cluster_of(candidate), self.cluster_of(truth)) {
            (Some(a), Some(b)) => a == b && a != self.overflow_cluster(),
            _ => false,
        }
    }

    /// Number of sources relaxed-relevant for `truth` (at least 1).
    pub fn relevant_count(&self, truth: &str) -> usize {
        match self.cluster_of(truth) {
            Some(c) if c != self.overflow_cluster() => {
                self.assignment.values().filter(|&&x| x == c).count()
            }
            _ => 1,
        }
    }

    /// The indicator embedding of a category list.
    pub fn embed(&self, categories: &[String]) -> Vec<T> {
        let set: HashSet<&str> = categories.iter().map(String::as_str).collect();
        self.category_vocab
            .iter()
            .map(|c| if set.contains(c.as_str()) { T::one() } else { T::zero() })
            .collect()
    }
}

/// Keeps the `m` most frequent categories (ties lexicographic), embeds each
/// source as a 0/1 vector over them and clusters with k-means.
pub fn build_cluster_model<T: Scalar>(
    sources: &BTreeMap<String, Vec<String>>,
    m: usize,
    k: usize,
    seed: u64,
) -> Result<ClusterModel<T>, EvalError> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for cats in sources.values() {
        let unique: HashSet<&str> = cats.iter().map(String::as_str).collect();
        for c in unique {
            *freq.entry(c).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let category_vocab: Vec<String> = ranked.into_iter().take(m).map(|(c, _)| c.to_owned()).collect();

    let mut model = ClusterModel {
        category_vocab,
        centroids: Vec::new(),
        assignment: BTreeMap::new(),
        k,
        seed,
    };
    let mut names = Vec::new();
    let mut points = Vec::new();
    for (source, cats) in sources {
        let v = model.embed(cats);
        if v.iter().any(|&x| x > T::zero()) {
            names.push(source.clone());
            points.push(v);
        } else {
            model.assignment.insert(source.clone(), k);
        }
    }
    if points.len() < k || k == 0 {
        return Err(EvalError::TooFewSources { k, found: points.len() });
    }
    let fit = kmeans(&points, &KMeansConfig::new(k, seed))?;
    for (name, label) in names.into_iter().zip(fit.labels) {
        model.assignment.insert(name, label);
    }
    model.centroids = fit.centroids;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeMetrics<T> {
    pub map: T,
    pub ndcg5: T,
    pub ndcg10: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMetrics<T> {
    pub query_id: String,
    pub true_source: String,
    pub strict: RegimeMetrics<T>,
    pub relaxed: Option<RegimeMetrics<T>>,
    pub strict_judgments: Vec<bool>,
    pub relaxed_judgments: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport<T> {
    pub map_strict: T,
    pub ndcg5_strict: T,
    pub ndcg10_strict: T,
    pub map_relaxed: Option<T>,
    pub ndcg5_relaxed: Option<T>,
    pub ndcg10_relaxed: Option<T>,
    pub n_queries: usize,
    pub per_query: Vec<QueryMetrics<T>>,
}

impl<T: Scalar> MetricsReport<T> {
    pub fn strict(&self) -> RegimeMetrics<T> {
        RegimeMetrics {
            map: self.map_strict,
            ndcg5: self.ndcg5_strict,
            ndcg10: self.ndcg10_strict,
        }
    }

    pub fn relaxed(&self) -> Result<RegimeMetrics<T>, EvalError> {
        match (self.map_relaxed, self.ndcg5_relaxed, self.ndcg10_relaxed) {
            (Some(map), Some(ndcg5), Some(ndcg10)) => Ok(RegimeMetrics { map, ndcg5, ndcg10 }),
            _ => Err(EvalError::MissingClusterModel),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl<T: Scalar> fmt::Display for MetricsReport<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10}{:>10}{:>10}{:>10}", "", "MAP", "NDCG@5", "NDCG@10")?;
        writeln!(
            f,
            "{:<10}{:>10.4}{:>10.4}{:>10.4}",
            "strict", self.map_strict, self.ndcg5_strict, self.ndcg10_strict
        )?;
        if let Ok(r) = self.relaxed() {
            writeln!(f, "{:<10}{:>10.4}{:>10.4}{:>10.4}", "relaxed", r.map, r.ndcg5, r.ndcg10)?;
        }
        write!(f, "queries: {}", self.n_queries)
    }
}

/// Scores a run against qrels. Every qrels query is evaluated; queries
/// absent from the run score zero. Relaxed metrics are produced when a
/// cluster model is given: a candidate is relevant if it shares the true
/// source's cluster, AP averages precision over the relevant ranks that
/// were retrieved, and the NDCG ideal is taken over the whole cluster.
pub fn evaluate_run<T: Scalar>(
    run: &Run,
    qrels: &Qrels,
    cluster_model: Option<&ClusterModel<T>>,
) -> Result<MetricsReport<T>, EvalError> {
    if let Some(q) = run.rankings.keys().find(|q| !qrels.relevant.contains_key(*q)) {
        return Err(EvalError::UnknownQuery(q.clone()));
    }
    let empty = Vec::new();
    let mut per_query = Vec::with_capacity(qrels.relevant.len());
    for (qid, truth) in &qrels.relevant {
        let ranked = run.rankings.get(qid).unwrap_or(&empty);
        let strict_judgments: Vec<bool> = ranked.iter().map(|e| e == truth).collect();
        let strict = RegimeMetrics {
            map: ap_from_judgments(&strict_judgments, 1),
            ndcg5: ndcg_from_judgments(&strict_judgments, 1, 5),
            ndcg10: ndcg_from_judgments(&strict_judgments, 1, 10),
        };
        let (relaxed, relaxed_judgments) = match cluster_model {
            Some(cm) => {
                let judgments: Vec<bool> = ranked.iter().map(|e| cm.same_cluster(e, truth)).collect();
                let retrieved = judgments.iter().filter(|&&j| j).count();
                let n_relevant = cm.relevant_count(truth);
                let m = RegimeMetrics {
                    map: ap_from_judgments(&judgments, retrieved),
                    ndcg5: ndcg_from_judgments(&judgments, n_relevant, 5),
                    ndcg10: ndcg_from_judgments(&judgments, n_relevant, 10),
                };
                (Some(m), Some(judgments))
            }
            None => (None, None),
        };
        per_query.push(QueryMetrics {
            query_id: qid.clone(),
            true_source: truth.clone(),
            strict,
            relaxed,
            strict_judgments,
            relaxed_judgments,
        });
    }
    let n = per_query.len();
    let mean = |f: &dyn Fn(&QueryMetrics<T>) -> T| -> T {
        if n == 0 {
            T::zero()
        } else {
            per_query.iter().map(f).sum::<T>() / T::from_count(n)
        }
    };
    let has_relaxed = cluster_model.is_some();
    let relaxed_mean = |f: &dyn Fn(&RegimeMetrics<T>) -> T| -> Option<T> {
        has_relaxed.then(|| mean(&|q: &QueryMetrics<T>| f(q.relaxed.as_ref().expect("relaxed computed"))))
    };
    Ok(MetricsReport {
        map_strict: mean(&|q| q.strict.map),
        ndcg5_strict: mean(&|q| q.strict.ndcg5),
        ndcg10_strict: mean(&|q| q.strict.ndcg10),
        map_relaxed: relaxed_mean(&|r| r.map),
        ndcg5_relaxed: relaxed_mean(&|r| r.ndcg5),
        ndcg10_relaxed: relaxed_mean(&|r| r.ndcg10),
        n_queries: n,
        per_query,
    })
}
