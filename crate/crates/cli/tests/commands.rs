mod common;

use std::collections::HashMap;
use std::path::Path;

use chrono::{TimeZone, Utc};
use clap::{CommandFactory, Parser};
use quotesource::pipeline::{EntityAnnotation, SrlFrame, SrlSentence, TokenSpan};
use quotesource::{Corpus, Method, QueryMode, SplitLabel};
use quotesource_cli::args::*;
use quotesource_cli::commands;

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn grammar_is_consistent() {
    Cli::command().debug_assert();
    let cli = Cli::try_parse_from([
        "quotesource", "recommend", "--corpus", "t.jsonl", "--index-dir", "ix", "--method", "er_document",
        "--query-mode", "keywords", "--w", "3", "--k", "20",
    ])
    .unwrap();
    match cli.command {
        Command::Recommend(a) => {
            assert_eq!(a.method, Method::ErDocument);
            assert_eq!(a.query_mode, QueryMode::Keywords);
            assert_eq!((a.w, a.k), (3, 20));
        }
        other => panic!("parsed as {other:?}"),
    }
    assert!(Cli::try_parse_from(["quotesource", "recommend", "--corpus", "a", "--index-dir", "b", "--method", "bm25"]).is_err());
    assert!(Cli::try_parse_from(["quotesource", "export-qa", "--corpus", "a", "--out", "b", "--source-mode", "predicted"]).is_err());
}

#[test]
fn recommend_then_eval_matches_a_hand_scorer() {
    let dir = tempfile::tempdir().unwrap();
    let mut log = Vec::new();
    commands::synthetic(&SyntheticArgs { out_dir: dir.path().to_path_buf(), seed: 3 }, &mut log).unwrap();
    let train = dir.path().join("train.jsonl");
    let index_dir = dir.path().join("index");
    let build = BuildArgs { corpus: train.clone(), index_dir: index_dir.clone(), doc_mode: Default::default(), tokenizer: TokenizerChoice::English };
    commands::build_sparse(&build, &mut log).unwrap();

    let run_path = dir.path().join("run.txt");
    let qrels_path = dir.path().join("qrels_out.txt");
    commands::recommend(
        &RecommendArgs {
            corpus: dir.path().join("test.jsonl"),
            index_dir,
            method: Method::DrSparse,
            query_mode: QueryMode::Title,
            w: 5,
            k: 10,
            keep_source: false,
            out: Some(run_path.clone()),
            qrels_out: Some(qrels_path.clone()),
            tag: None,
        },
        &mut log,
    )
    .unwrap();
    assert_eq!(lines(&qrels_path), lines(&dir.path().join("qrels.txt")));

    // strict MAP by hand: reciprocal rank of the true source, 0 if absent
    let truth: HashMap<String, String> = lines(&qrels_path)
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].to_owned(), f[2].to_owned())
        })
        .collect();
    let mut rr: HashMap<String, f64> = truth.keys().map(|q| (q.clone(), 0.0)).collect();
    for l in lines(&run_path) {
        let f: Vec<&str> = l.split_whitespace().collect();
        assert_eq!(f.len(), 5);
        assert_eq!(f[4], "dr_sparse");
        if truth[f[0]] == f[1] {
            rr.insert(f[0].to_owned(), 1.0 / f[2].parse::<f64>().unwrap());
        }
    }
    let expected = rr.values().sum::<f64>() / rr.len() as f64;

    let mut out = Vec::new();
    commands::eval(
        &EvalArgs { run: run_path, qrels: qrels_path, corpus: Some(train), clusters: 40, categories: 100, seed: 0, json: true },
        &mut out,
    )
    .unwrap();
    let report: serde_json::Value = serde_json::from_slice(&out).unwrap();
    assert!((report["map_strict"].as_f64().unwrap() - expected).abs() < 1e-12);
    assert_eq!(report["n_queries"].as_u64().unwrap() as usize, truth.len());
    assert!(report["map_relaxed"].as_f64().unwrap() >= report["map_strict"].as_f64().unwrap());
    assert!(expected > 0.5, "planted topics should be easy for BM25, got {expected}");
}

#[test]
fn ingest_split_and_stats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::small_corpus();
    let all: Vec<_> = data.train.iter().chain(&data.test).cloned().collect();
    let raw = dir.path().join("raw.jsonl");
    common::write_corpus(&raw, &all);
    let clean = dir.path().join("clean.jsonl");
    let mut log = Vec::new();
    commands::ingest(&IngestArgs { corpus: raw, out: clean.clone() }, &mut log).unwrap();
    let ingested = Corpus::load(&clean, SplitLabel::Unsplit).unwrap();
    assert_eq!(ingested.len(), all.len());
    assert!(ingested.records().iter().all(|r| r.quote_type.is_some()));

    let parts = dir.path().join("parts");
    commands::split(
        &SplitArgs { corpus: clean.clone(), out_dir: parts.clone(), seed: 5, valid_fraction: 0.5, train_end: None, valid_test_start: None },
        &mut log,
    )
    .unwrap();
    let sizes: Vec<usize> = ["train", "valid", "test"]
        .iter()
        .map(|n| Corpus::load(parts.join(format!("{n}.jsonl")), SplitLabel::Unsplit).unwrap().len())
        .collect();
    assert_eq!(sizes[0], data.train.len());
    assert_eq!(sizes[1] + sizes[2], data.test.len());

    let mut out = Vec::new();
    commands::stats(&StatsArgs { corpus: clean, json: true }, &mut out).unwrap();
    let stats: serde_json::Value = serde_json::from_slice(&out).unwrap();
    assert_eq!(stats["n_samples"].as_u64().unwrap() as usize, all.len());
    let p = &stats["quote_type_proportions"];
    let total = p["direct"].as_f64().unwrap() + p["indirect"].as_f64().unwrap() + p["mixed"].as_f64().unwrap();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn exports_write_well_formed_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::small_corpus();
    let corpus = dir.path().join("train.jsonl");
    common::write_corpus(&corpus, &data.train[..20]);
    let mut log = Vec::new();

    let bio = dir.path().join("train.bio");
    commands::export_bio(&ExportArgs { corpus: corpus.clone(), out: bio.clone() }, &mut log).unwrap();
    let text = std::fs::read_to_string(&bio).unwrap();
    let sentences: Vec<&str> = text.split("\n\n").filter(|s| !s.trim().is_empty()).collect();
    assert_eq!(sentences.len(), 20);
    for s in sentences {
        let tags: Vec<&str> = s.lines().map(|l| l.split('\t').nth(1).unwrap()).collect();
        assert!(tags.contains(&"B-S") && tags.contains(&"B-Q"), "{s}");
    }

    let qa = dir.path().join("train.qa.jsonl");
    commands::export_qa(&ExportQaArgs { corpus, out: qa.clone(), source_mode: QaSourceMode::Masked, lexicon: None }, &mut log).unwrap();
    let rows = lines(&qa);
    assert_eq!(rows.len(), 40);
    for row in rows {
        let v: serde_json::Value = serde_json::from_str(&row).unwrap();
        let context = [&v["context_l"], &v["context_s"], &v["context_r"]]
            .iter()
            .filter_map(|s| s.as_str())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        let start = v["answer_start"].as_u64().unwrap() as usize;
        let answer = v["answer_text"].as_str().unwrap();
        let got: String = context.chars().skip(start).take(answer.chars().count()).collect();
        assert_eq!(got, answer);
    }
}

#[test]
fn annotate_marks_direct_quotes_only() {
    let dir = tempfile::tempdir().unwrap();
    let lexicon = dir.path().join("triggers.txt");
    std::fs::write(&lexicon, "say\nsaid\nwarn\nwarned\n").unwrap();
    let input = dir.path().join("sentences.txt");
    std::fs::write(
        &input,
        "\"We will reopen schools in the autumn,\" said Gavin Williamson.\n\
         The minister said that schools would reopen in the autumn.\n",
    )
    .unwrap();
    let out = dir.path().join("annotated.jsonl");
    let mut log = Vec::new();
    commands::annotate(&AnnotateArgs { corpus: None, text: Some(input), lexicon, out: Some(out.clone()) }, &mut log).unwrap();
    let rows: Vec<serde_json::Value> = lines(&out).iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["source"], "Gavin Williamson");
    assert!(rows[0]["quote"].as_str().unwrap().contains("We will reopen schools in the autumn"));
    assert!(rows[1]["source"].is_null());
    assert_eq!(String::from_utf8(log).unwrap().trim(), "2 sentences, 1 attributed");
}

fn srl(article: &str, title: &str, hour: u32, text: &str, entity: &str, classes: &[&str]) -> SrlSentence {
    let n = text.split_whitespace().count();
    SrlSentence {
        article_id: article.into(),
        sentence_text: text.into(),
        frames: vec![SrlFrame {
            verb: TokenSpan::new(2, 3),
            verb_lemma: Some("say".into()),
            subject: Some(TokenSpan::new(0, 2)),
            object: Some(TokenSpan::new(3, n)),
        }],
        entity_annotations: vec![EntityAnnotation {
            span: TokenSpan::new(0, 2),
            entity_id: entity.into(),
            ontology_classes: classes.iter().map(|c| c.to_string()).collect(),
        }],
        published_at: Utc.with_ymd_and_hms(2020, 3, 1, hour, 0, 0).unwrap(),
        title: title.into(),
        summary_first_sentence: String::new(),
    }
}

#[test]
fn filter_keeps_recurring_people_from_distinct_articles() {
    let dir = tempfile::tempdir().unwrap();
    let sentences = [
        srl("a1", "Vaccine trial reports early results", 1, "Dr Lee said the vaccine trial is going well", "Lee", &["Person"]),
        srl("a2", "Hospitals prepare for a second wave", 2, "Dr Lee said hospitals must prepare for winter", "Lee", &["Person"]),
        srl("a3", "City rules tighten across the region", 3, "Greater Paris said the new rules are strict and fair", "Paris", &["Place", "Person"]),
        srl("a4", "Vaccine trial reports early results", 4, "Dr Lee said the vaccine trial is going very well", "Lee", &["Person"]),
        srl("a5", "Markets fall on lockdown fears", 5, "Ms Hall said markets will recover by the summer", "Hall", &["Person"]),
    ];
    let input = dir.path().join("srl.jsonl");
    std::fs::write(&input, sentences.iter().map(|s| serde_json::to_string(s).unwrap() + "\n").collect::<String>()).unwrap();
    std::fs::write(dir.path().join("triggers.txt"), "say\n").unwrap();
    std::fs::write(dir.path().join("allowed.txt"), "Person\nOrganisation\n").unwrap();
    let out = dir.path().join("candidates.jsonl");
    let mut log = Vec::new();
    commands::filter(
        &FilterArgs {
            sentences: input,
            lexicon: dir.path().join("triggers.txt"),
            allowed: dir.path().join("allowed.txt"),
            min_count: 2,
            jaccard: 0.8,
            out: out.clone(),
        },
        &mut log,
    )
    .unwrap();
    let kept: Vec<serde_json::Value> = lines(&out).iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    // a4 repeats a1's headline, Paris is a place, Hall occurs once
    let articles: Vec<&str> = kept.iter().map(|c| c["article_id"].as_str().unwrap()).collect();
    assert_eq!(articles, ["a1", "a2"]);
    assert!(kept.iter().all(|c| c["source_entity"] == "Lee"));
}
