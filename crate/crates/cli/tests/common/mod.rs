#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use quotesource::dense::VectorStore;
use quotesource::synthetic::{generate, SyntheticConfig, SyntheticCorpus};
use quotesource::{Corpus, SplitLabel};
use quotesource_cli::args::{BuildArgs, BuildDenseArgs, TokenizerChoice};
use quotesource_cli::commands;

pub fn small_config() -> SyntheticConfig {
    SyntheticConfig { n_topics: 4, experts_per_topic: 4, prolific_docs: 6, ..SyntheticConfig::default() }
}

pub fn small_corpus() -> SyntheticCorpus {
    generate(&small_config())
}

pub fn write_corpus(path: &Path, records: &[quotesource::QuoteRecord]) {
    let corpus = Corpus::new(records.to_vec(), SplitLabel::Unsplit).unwrap();
    corpus.save(path).unwrap();
}

/// Topic one-hot plus a small id-dependent offset so no two vectors tie.
pub fn topic_vectors(data: &SyntheticCorpus, records: &[quotesource::QuoteRecord]) -> VectorStore<f32> {
    let topic: HashMap<&str, usize> = data.experts.iter().map(|e| (e.entity.as_str(), e.topic)).collect();
    let n = data.experts.iter().map(|e| e.topic).max().unwrap() + 1;
    let rows: Vec<Vec<f32>> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut v = vec![0.0f32; n + 1];
            v[topic[r.source_entity.as_str()]] = 1.0;
            v[n] = (i % 17) as f32 * 0.01;
            v
        })
        .collect();
    VectorStore::from_rows(records.iter().map(|r| r.record_id.clone()).collect(), &rows)
        .unwrap()
        .with_model("topic-onehot")
}

/// Writes the small synthetic corpus and builds every index into `dir`.
pub fn build_all(dir: &Path) -> SyntheticCorpus {
    let data = small_corpus();
    let train = dir.join("train.jsonl");
    write_corpus(&train, &data.train);
    let index_dir = dir.join("index");
    let build = BuildArgs {
        corpus: train.clone(),
        index_dir: index_dir.clone(),
        doc_mode: Default::default(),
        tokenizer: TokenizerChoice::English,
    };
    let mut log = Vec::new();
    commands::build_sparse(&build, &mut log).unwrap();
    commands::build_lm(&build, &mut log).unwrap();
    topic_vectors(&data, &data.train).save(dir.join("docs.sqv")).unwrap();
    topic_vectors(&data, &data.test).save(dir.join("queries.sqv")).unwrap();
    commands::build_dense(
        &BuildDenseArgs {
            corpus: train,
            index_dir,
            vectors: dir.join("docs.sqv"),
            query_vectors: Some(dir.join("queries.sqv")),
            doc_mode: Default::default(),
            m: 8,
            ef_construction: 64,
            ef_search: 50,
            seed: 1,
            no_normalize: false,
        },
        &mut log,
    )
    .unwrap();
    data
}
