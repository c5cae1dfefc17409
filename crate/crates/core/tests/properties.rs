mod common;

use std::collections::HashMap;

use proptest::collection::vec;
use proptest::prelude::*;
use quotesource::corpus::parse_record;
use quotesource::dense::HnswParams;
use quotesource::evaluation::ndcg_at_k;
use quotesource::expert_lm::{AttributedDoc, ExpertMethod};
use quotesource::kmeans::{kmeans, KMeansConfig};
use quotesource::pipeline::{chronological_split, dedup_stream, ArticleHeader, SplitBoundaries};
use quotesource::recommender::experts_from_documents;
use quotesource::{corpus_stats, Corpus, HnswIndex, LmStats, SparseIndex, SplitLabel, TokenizerConfig, VectorStore};

use common::*;

fn words(vocab: usize, max_len: usize) -> impl Strategy<Value = String> {
    vec(0..vocab, 1..=max_len).prop_map(|ws| ws.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn record_round_trip(records in strategies::records(20)) {
        for r in records {
            prop_assert_eq!(parse_record(&r.to_json_line()).unwrap(), r);
        }
    }

    #[test]
    fn stats_ignore_record_order(records in strategies::records(30), shift in 0usize..30) {
        let mut rotated = records.clone();
        rotated.rotate_left(shift);
        let a = corpus_stats(&Corpus::new(records, SplitLabel::Unsplit).unwrap()).unwrap();
        let b = corpus_stats(&Corpus::new(rotated, SplitLabel::Unsplit).unwrap()).unwrap();
        prop_assert_eq!(a.n_samples, b.n_samples);
        prop_assert_eq!(a.n_articles, b.n_articles);
        prop_assert_eq!(a.n_source_entities, b.n_source_entities);
        prop_assert!((a.avg_quote_length - b.avg_quote_length).abs() < 1e-9);
        prop_assert!((a.quote_type_proportions.direct - b.quote_type_proportions.direct).abs() < 1e-9);
    }

    #[test]
    fn split_is_deterministic_and_ordered(records in strategies::records(200), seed in any::<u64>()) {
        let b = SplitBoundaries::default();
        let first = chronological_split(records.clone(), &b, seed).unwrap();
        prop_assert_eq!(&chronological_split(records, &b, seed).unwrap(), &first);
        prop_assert!(first.0.records().iter().all(|r| r.published_at <= b.train_end));
        prop_assert!(first.1.records().iter().chain(first.2.records()).all(|r| r.published_at >= b.valid_test_start));
    }

    #[test]
    fn dedup_keeps_a_subsequence(titles in vec(0usize..6, 1..30)) {
        let headers: Vec<ArticleHeader> = titles
            .iter()
            .enumerate()
            .map(|(i, t)| ArticleHeader {
                title: (0..6).map(|j| format!("t{t}x{j}")).collect::<Vec<_>>().join(" "),
                summary_first_sentence: format!("lead{t} paragraph{t}"),
                published_at: start_time() + chrono::Duration::hours(i as i64),
            })
            .collect();
        let kept = dedup_stream(&headers, 0.8).unwrap();
        let mut it = headers.iter();
        prop_assert!(kept.iter().all(|k| it.any(|h| h == k)));
        let mut distinct = titles.clone();
        distinct.sort();
        distinct.dedup();
        prop_assert_eq!(kept.len(), distinct.len());
        prop_assert_eq!(&kept[0], &headers[0]);
    }

    #[test]
    fn sparse_snapshot_round_trips(docs in vec(words(8, 10), 1..30)) {
        let docs: Vec<(String, String)> = docs.into_iter().enumerate().map(|(i, t)| (format!("d{i}"), t)).collect();
        let index = SparseIndex::build(docs, TokenizerConfig::english()).unwrap();
        index.check_invariants().unwrap();
        let bytes = index.to_bytes();
        let back = SparseIndex::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, index);
    }

    #[test]
    fn unrelated_document_keeps_order(docs in vec(words(6, 6), 2..20), query in words(6, 1)) {
        // Extra document: average length, unseen terms. A single query term
        // keeps the idf shift uniform across the result list.
        let docs: Vec<(String, String)> = docs.into_iter().enumerate().map(|(i, t)| (format!("d{i:02}"), t)).collect();
        let total: usize = docs.iter().map(|(_, t)| t.split_whitespace().count()).sum();
        prop_assume!(total.is_multiple_of(docs.len()));
        let avg = total / docs.len();
        let filler = (0..avg).map(|i| format!("zz{i}")).collect::<Vec<_>>().join(" ");
        let before = SparseIndex::build(docs.clone(), TokenizerConfig::plain()).unwrap();
        let mut more = docs.clone();
        more.push(("extra".into(), filler));
        let after = SparseIndex::build(more, TokenizerConfig::plain()).unwrap();
        prop_assert_eq!(before.avg_doc_length(), after.avg_doc_length());
        let order = |ix: &SparseIndex| ix.search(&query, 100).unwrap().into_iter().map(|p| p.0).collect::<Vec<_>>();
        prop_assert_eq!(order(&before), order(&after));
    }

    #[test]
    fn lm_snapshot_round_trips(docs in vec((words(10, 8), 0usize..4), 1..20)) {
        let stats = LmStats::build(
            docs.iter().enumerate().map(|(i, (t, e))| AttributedDoc { doc_id: format!("d{i}"), text: t.clone(), expert: format!("e{e}") }),
            TokenizerConfig::plain(),
        ).unwrap();
        stats.check_invariants().unwrap();
        let back = LmStats::from_bytes(&stats.to_bytes()).unwrap();
        prop_assert_eq!(back, stats);
    }

    #[test]
    fn fewer_documents_never_raise_document_score(
        docs in vec((words(8, 8), 0usize..3), 2..15),
        query in words(8, 3),
        moved in any::<prop::sample::Index>(),
    ) {
        let build = |docs: &[(String, usize)]| LmStats::build(
            docs.iter().enumerate().map(|(i, (t, e))| AttributedDoc { doc_id: format!("d{i}"), text: t.clone(), expert: format!("e{e}") }),
            TokenizerConfig::plain(),
        ).unwrap();
        let before = build(&docs);
        let i = moved.index(docs.len());
        let owner = format!("e{}", docs[i].1);
        let mut reassigned = docs.clone();
        reassigned[i].1 = 99;
        let after = build(&reassigned);
        let terms = before.query_terms(&query);
        let a = before.score_document_based(&terms, &owner).unwrap();
        match after.score_document_based(&terms, &owner) {
            Ok(b) if a == f64::NEG_INFINITY => prop_assert_eq!(b, f64::NEG_INFINITY),
            Ok(b) => prop_assert!(b <= a + 1e-12 * a.abs().max(1.0)),
            Err(_) => prop_assert!(after.expert_occurrences(&owner).is_none()),
        }
    }

    #[test]
    fn rankings_are_sorted_and_unique(docs in vec((words(8, 8), 0usize..5), 1..20), query in words(8, 3), k in 1usize..6) {
        let stats = LmStats::build(
            docs.iter().enumerate().map(|(i, (t, e))| AttributedDoc { doc_id: format!("d{i}"), text: t.clone(), expert: format!("e{e}") }),
            TokenizerConfig::plain(),
        ).unwrap();
        let terms = stats.query_terms(&query);
        for method in [ExpertMethod::Candidate, ExpertMethod::Document] {
            let r = stats.rank_experts(&terms, method, k).unwrap();
            r.check_invariants().unwrap();
            prop_assert!(r.len() <= k);
            prop_assert!(r.entries.iter().all(|(_, s)| s.is_finite()));
        }
    }

    #[test]
    fn ndcg_rewards_earlier_hits(len in 2usize..15, pos in 1usize..15, k in 1usize..12) {
        prop_assume!(pos < len);
        let relevant = ["x".to_string()].into();
        let mut ranked: Vec<String> = (0..len).map(|i| format!("n{i}")).collect();
        ranked[pos] = "x".into();
        let later = ndcg_at_k::<f64, _>(&ranked, &relevant, k);
        ranked.swap(pos, pos - 1);
        let earlier = ndcg_at_k::<f64, _>(&ranked, &relevant, k);
        prop_assert!(earlier >= later);
    }

    #[test]
    fn kmeans_objective_never_increases(points in vec(vec(-5.0f64..5.0, 3), 5..60), k in 1usize..5, seed in any::<u64>()) {
        prop_assume!(k <= points.len());
        let fit = kmeans(&points, &KMeansConfig::new(k, seed)).unwrap();
        prop_assert!(fit.objective_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        prop_assert_eq!(fit.labels.len(), points.len());
        prop_assert!(fit.centroids.iter().flatten().all(|c| c.is_finite()));
    }

    #[test]
    fn document_collapse_respects_order(experts in vec(0usize..6, 0..20)) {
        let docs: Vec<(String, f64)> = experts.iter().enumerate().map(|(i, _)| (format!("d{i}"), -(i as f64))).collect();
        let map: HashMap<String, String> = experts.iter().enumerate().map(|(i, e)| (format!("d{i}"), format!("E{e}"))).collect();
        let ranking = experts_from_documents(&docs, &map).unwrap();
        prop_assert!(ranking.len() <= docs.len());
        let mut expected: Vec<String> = Vec::new();
        for e in &experts {
            let name = format!("E{e}");
            if !expected.contains(&name) {
                expected.push(name);
            }
        }
        prop_assert_eq!(ranking.experts().map(String::from).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn flat_search_matches_scan(rows in vec(vec(-1.0f64..1.0, 8), 1..80), query in vec(-1.0f64..1.0, 8), k in 1usize..12) {
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("v{i:03}")).collect();
        let store = VectorStore::from_rows(ids.clone(), &rows).unwrap();
        prop_assert_eq!(store.search_flat(&query, k).unwrap(), naive_scan(&ids, &rows, &query, k));
    }

    #[test]
    fn hnsw_graph_is_well_formed(rows in vec(vec(-1.0f64..1.0, 6), 1..150), m in 2usize..8, seed in any::<u64>()) {
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("v{i:03}")).collect();
        let store = VectorStore::from_rows(ids, &rows).unwrap();
        prop_assume!(store.clone().normalize().is_ok());
        let store = store.normalize().unwrap();
        let index = HnswIndex::build(store.clone(), HnswParams { m, ef_construction: 32, seed, ..HnswParams::default() }).unwrap();
        index.check_invariants().map_err(TestCaseError::fail)?;
        let q = store.vector(0).to_vec();
        let exact = store.search_flat(&q, rows.len()).unwrap();
        let found = index.search(&q, rows.len().min(5), rows.len().max(5)).unwrap();
        prop_assert!(found.len() <= 5);
        prop_assert!(found.windows(2).all(|w| w[0].1 >= w[1].1));
        prop_assert!(found.iter().all(|(id, s)| exact.iter().any(|(e, t)| e == id && (s - t).abs() < 1e-9)));
    }
}
