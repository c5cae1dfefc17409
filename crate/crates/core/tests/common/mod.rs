//! Independent reference implementations and random-input generators shared
//! by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Duration, TimeZone, Utc};
use quotesource::corpus::QuoteRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Whitespace-separated words drawn from `w0..w{vocab}`.
pub fn random_text(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> String {
    let len = rng.random_range(1..=max_len);
    (0..len)
        .map(|_| format!("w{}", rng.random_range(0..vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn relative_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Scores every document by evaluating the BM25 sum term by term.
pub fn bm25_brute(docs: &[(String, String)], query: &str, k1: f64, b: f64) -> HashMap<String, f64> {
    let tokenized: Vec<(&str, Vec<&str>)> = docs
        .iter()
        .map(|(id, text)| (id.as_str(), text.split_whitespace().collect()))
        .collect();
    let n = tokenized.len() as f64;
    let avg = tokenized.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
    let mut out = HashMap::new();
    for (id, terms) in &tokenized {
        let len = terms.len() as f64;
        let mut score = 0.0;
        for q in query.split_whitespace() {
            let tf = terms.iter().filter(|t| **t == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = tokenized.iter().filter(|(_, t)| t.contains(&q)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
        }
        out.insert(id.to_string(), score);
    }
    out
}

/// Direct evaluation of both expert language models without logarithms
/// until the final step.
pub struct LmOracle {
    docs: Vec<(String, Vec<String>, String)>,
}

impl LmOracle {
    pub fn new(docs: &[(String, String, String)]) -> Self {
        LmOracle {
            docs: docs
                .iter()
                .map(|(id, text, e)| (id.clone(), text.split_whitespace().map(String::from).collect(), e.clone()))
                .collect(),
        }
    }

    fn experts(&self) -> Vec<&str> {
        let mut e: Vec<&str> = self.docs.iter().map(|d| d.2.as_str()).collect();
        e.sort();
        e.dedup();
        e
    }

    fn avg_len(&self) -> f64 {
        self.docs.iter().map(|d| d.1.len() as f64).sum::<f64>() / self.docs.len() as f64
    }

    fn p_t(&self, t: &str) -> f64 {
        let total: usize = self.docs.iter().map(|d| d.1.len()).sum();
        let count: usize = self.docs.iter().map(|d| d.1.iter().filter(|x| *x == t).count()).sum();
        count as f64 / total as f64
    }

    fn p_t_d(terms: &[String], t: &str) -> f64 {
        terms.iter().filter(|x| *x == t).count() as f64 / terms.len() as f64
    }

    pub fn candidate(&self, query: &[&str], expert: &str) -> f64 {
        let experts = self.experts();
        let assoc_total: usize = experts
            .iter()
            .map(|e| self.docs.iter().filter(|d| d.2 == *e).count())
            .sum();
        let beta = assoc_total as f64 * self.avg_len() / experts.len() as f64;
        let n_e = self.docs.iter().filter(|d| d.2 == expert).count() as f64;
        let lambda = beta / (beta + n_e);
        let mut product = 1.0;
        for t in query {
            let sum: f64 = self
                .docs
                .iter()
                .filter(|d| d.2 == expert)
                .map(|d| Self::p_t_d(&d.1, t))
                .sum();
            product *= (1.0 - lambda) * sum + lambda * self.p_t(t);
        }
        product.ln()
    }

    pub fn document(&self, query: &[&str], expert: &str) -> f64 {
        let avg = self.avg_len();
        let mut total = 0.0;
        for d in self.docs.iter().filter(|d| d.2 == expert) {
            let lambda = avg / (avg + d.1.len() as f64);
            let mut product = 1.0;
            for t in query {
                product *= (1.0 - lambda) * Self::p_t_d(&d.1, t) + lambda * self.p_t(t);
            }
            total += product;
        }
        total.ln()
    }
}

/// Exact inner-product ranking by a plain loop, ties by ascending id.
pub fn naive_scan(ids: &[String], rows: &[Vec<f64>], query: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = ids
        .iter()
        .zip(rows)
        .map(|(id, row)| (id.clone(), row.iter().zip(query).map(|(a, b)| a * b).sum()))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Per-query metrics computed from first principles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandScores {
    pub ap: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

fn hand_ndcg(flags: &[bool], n_relevant: usize, k: usize) -> f64 {
    let gain = |rank: usize| if rank == 1 { 1.0 } else { 1.0 / (rank as f64).log2() };
    let mut dcg = 0.0;
    for (i, &f) in flags.iter().enumerate().take(k) {
        if f {
            dcg += gain(i + 1);
        }
    }
    let mut ideal = 0.0;
    for rank in 1..=n_relevant.min(k) {
        ideal += gain(rank);
    }
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

pub fn hand_strict(ranked: &[String], truth: &str) -> HandScores {
    match ranked.iter().position(|e| e == truth) {
        Some(i) => {
            let rank = i + 1;
            let g = if rank == 1 { 1.0 } else { 1.0 / (rank as f64).log2() };
            HandScores {
                ap: 1.0 / rank as f64,
                ndcg5: if rank <= 5 { g } else { 0.0 },
                ndcg10: if rank <= 10 { g } else { 0.0 },
            }
        }
        None => HandScores {
            ap: 0.0,
            ndcg5: 0.0,
            ndcg10: 0.0,
        },
    }
}

/// Relaxed scores given an explicit source → cluster map; `overflow` marks
/// the cluster whose members only match themselves.
pub fn hand_relaxed(ranked: &[String], truth: &str, clusters: &BTreeMap<String, usize>, overflow: usize) -> HandScores {
    let truth_cluster = clusters.get(truth).copied();
    let relevant = |e: &String| {
        e == truth
            || match (clusters.get(e), truth_cluster) {
                (Some(&a), Some(b)) => a == b && b != overflow,
                _ => false,
            }
    };
    let flags: Vec<bool> = ranked.iter().map(relevant).collect();
    let mut precisions = Vec::new();
    let mut hits = 0;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            hits += 1;
            precisions.push(hits as f64 / (i + 1) as f64);
        }
    }
    let ap = if precisions.is_empty() {
        0.0
    } else {
        precisions.iter().sum::<f64>() / precisions.len() as f64
    };
    let n_relevant = match truth_cluster {
        Some(c) if c != overflow => clusters.values().filter(|&&x| x == c).count(),
        _ => 1,
    };
    HandScores {
        ap,
        ndcg5: hand_ndcg(&flags, n_relevant, 5),
        ndcg10: hand_ndcg(&flags, n_relevant, 10),
    }
}

pub fn start_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 19, 0, 0, 0).unwrap()
}

const NAMES: [&str; 5] = ["Dr. Lee", "Ana Ruiz", "The Ministry", "Prof. Kim", "Acme Corp"];

/// A valid record published `minutes` after 2020-01-19, shifted past the
/// gap between the split boundaries.
pub fn make_record(id: usize, minutes: i64, name: usize, words: &[usize]) -> QuoteRecord {
    let surface = NAMES[name % NAMES.len()];
    let quote = words.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" ");
    let gap_start = Utc.with_ymd_and_hms(2020, 6, 1, 0, 0, 0).unwrap();
    let gap_end = Utc.with_ymd_and_hms(2020, 6, 21, 0, 0, 0).unwrap();
    let mut at = start_time() + Duration::minutes(minutes);
    if at >= gap_start && at < gap_end {
        at += gap_end - gap_start;
    }
    let json = serde_json::json!({
        "record_id": format!("r{id}"),
        "left_sentence": "Earlier context.",
        "main_sentence": format!("{surface} said \"{quote}\"."),
        "right_sentence": "Later context.",
        "quote": quote,
        "source_surface": surface,
        "source_entity": format!("http://dbpedia.org/resource/{}", surface.replace(' ', "_")),
        "ontology_classes": ["Person"],
        "keywords": ["w1"],
        "title": format!("Title {id}"),
        "summary_first_sentence": "Summary.",
        "categories": ["News"],
        "news_source": "Wire",
        "published_at": at.to_rfc3339(),
    });
    quotesource::corpus::parse_record(&json.to_string()).unwrap()
}

pub const MINUTES_SPAN: i64 = 255 * 24 * 60;

pub fn random_record(rng: &mut ChaCha8Rng, id: usize) -> QuoteRecord {
    let words: Vec<usize> = (0..rng.random_range(4..10)).map(|_| rng.random_range(0..30)).collect();
    make_record(id, rng.random_range(0..MINUTES_SPAN), rng.random_range(0..NAMES.len()), &words)
}

pub mod strategies {
    use super::*;
    use proptest::collection::vec;
    use proptest::prelude::*;
    use quotesource::pipeline::{EntityAnnotation, SrlFrame, SrlSentence, TokenSpan};

    pub fn records(n: usize) -> impl Strategy<Value = Vec<QuoteRecord>> {
        vec((0..MINUTES_SPAN, 0..NAMES.len(), vec(0usize..30, 4..10)), n).prop_map(|rows| {
            rows.iter()
                .enumerate()
                .map(|(i, (m, name, words))| make_record(i, *m, *name, words))
                .collect()
        })
    }

    const VERBS: [&str; 5] = ["said", "warned", "walked", "say", "ate"];
    const CLASSES: [&str; 6] = ["Person", "Scientist", "Organisation", "Country", "Place", "Band"];

    fn span(len: usize) -> impl Strategy<Value = TokenSpan> {
        (0..=len).prop_flat_map(move |s| (Just(s), s..=len)).prop_map(|(s, e)| TokenSpan::new(s, e))
    }

    fn frame(len: usize) -> impl Strategy<Value = SrlFrame> {
        (
            0..len,
            proptest::option::of(0..VERBS.len()),
            proptest::option::of(span(len)),
            proptest::option::of(span(len)),
        )
            .prop_map(|(v, lemma, subject, object)| SrlFrame {
                verb: TokenSpan::new(v, v + 1),
                verb_lemma: lemma.map(|i| VERBS[i].to_string()),
                subject,
                object,
            })
    }

    fn annotation(len: usize) -> impl Strategy<Value = EntityAnnotation> {
        (span(len), 0..8usize, proptest::sample::subsequence(CLASSES.to_vec(), 0..3)).prop_map(|(span, e, classes)| {
            EntityAnnotation {
                span,
                entity_id: format!("E{e}"),
                ontology_classes: classes.into_iter().map(String::from).collect(),
            }
        })
    }

    fn sentence(id: usize) -> impl Strategy<Value = SrlSentence> {
        (4usize..14)
            .prop_flat_map(|len| {
                (
                    vec(0..VERBS.len(), len),
                    vec(frame(len), 0..4),
                    vec(annotation(len), 0..3),
                    0..MINUTES_SPAN,
                )
            })
            .prop_map(move |(words, frames, entity_annotations, m)| SrlSentence {
                article_id: format!("a{}", id / 3),
                sentence_text: words.iter().map(|&w| VERBS[w]).collect::<Vec<_>>().join(" "),
                frames,
                entity_annotations,
                published_at: start_time() + Duration::minutes(m),
                title: format!("Article {}", id / 3),
                summary_first_sentence: String::new(),
            })
    }

    pub fn sentences(n: usize) -> impl Strategy<Value = Vec<SrlSentence>> {
        (0..n).map(sentence).collect::<Vec<_>>()
    }
}
