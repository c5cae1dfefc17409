//! Prints strict and relaxed metrics for every text method on the bundled
//! synthetic corpus.

use quotesource::evaluation::{build_cluster_model, evaluate_run, Run};
use quotesource::recommender::{attributed_documents, form_document};
use quotesource::synthetic::{generate, SyntheticConfig};
use quotesource::{DocSpec, LmStats, Method, QueryMode, QuerySpec, RetrievalSet, SparseIndex, TokenizerConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).map_or(7, |s| s.parse().unwrap());
    let corpus = generate(&SyntheticConfig { seed, ..SyntheticConfig::default() });
    let mut set = RetrievalSet::with_sources(&corpus.train);
    set.sparse = Some(
        SparseIndex::build(
            corpus.train.iter().map(|r| form_document(r, DocSpec::Sentence)),
            TokenizerConfig::english(),
        )
        .unwrap(),
    );
    set.lm = Some(LmStats::build(attributed_documents(&corpus.train, DocSpec::Sentence), TokenizerConfig::english()).unwrap());
    let clusters = build_cluster_model::<f64>(&corpus.source_categories(), 100, 40, 0).unwrap();
    let spec = QuerySpec::new(QueryMode::Title);
    for method in [Method::DrSparse, Method::ErCandidate, Method::ErDocument] {
        let mut run = Run::default();
        for r in &corpus.test {
            let ranking = set.recommend(r, method, &spec, 10).unwrap();
            run.rankings.insert(r.record_id.clone(), ranking.experts().map(String::from).collect());
        }
        let report = evaluate_run(&run, &corpus.qrels(), Some(&clusters)).unwrap();
        println!("{method}\n{report}\n");
        let (mut p, mut n, mut cp, mut cn) = (0.0, 0.0, 0, 0);
        for q in &report.per_query {
            let prolific = corpus.experts.iter().find(|e| e.entity == q.true_source).unwrap().prolific;
            if prolific { p += q.strict.map; cp += 1 } else { n += q.strict.map; cn += 1 }
        }
        println!("prolific {:.3} niche {:.3}", p / cp as f64, n / cn as f64);
    }
}
