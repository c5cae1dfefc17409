//! Mean recall@k of HNSW against the flat scan for vectors and queries
//! read from SQV1 files.
//!
//! Usage: hnsw_recall DOCS.sqv QUERIES.sqv [M] [EF_SEARCH] [KEEP_PRUNED]

use std::collections::HashSet;

use quotesource::dense::{load_vectors, HnswIndex, HnswParams};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let docs = load_vectors::<f32>(&args[1], true).expect("docs");
    let queries = load_vectors::<f32>(&args[2], false).expect("queries");
    let m = args.get(3).map_or(16, |s| s.parse().unwrap());
    let ef = args.get(4).map_or(100, |s| s.parse().unwrap());
    let keep_pruned = args.get(5).is_none_or(|s| s == "true");
    let k = 10;
    let start = std::time::Instant::now();
    let index = HnswIndex::build(
        docs.clone(),
        HnswParams {
            m,
            ef_construction: 200,
            seed: 0,
            keep_pruned,
        },
    )
    .expect("build");
    let built = start.elapsed();
    let mut recall = 0.0;
    for i in 0..queries.len() {
        let q = queries.vector(i);
        let truth: HashSet<String> = docs.search_flat(q, k).unwrap().into_iter().map(|p| p.0).collect();
        let found = index.search(q, k, ef).unwrap();
        recall += found.iter().filter(|(id, _)| truth.contains(id)).count() as f64 / k as f64;
    }
    println!(
        "recall@{k} {:.4} over {} queries (M={m}, ef_search={ef}, keep_pruned={keep_pruned}, build {:.2?})",
        recall / queries.len() as f64,
        queries.len(),
        built
    );
}
