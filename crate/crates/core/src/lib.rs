//! Quote-source extraction, indexing and expert recommendation.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar used by the command-line tool.

pub mod annotator;
mod codec;
pub mod corpus;
pub mod dense;
pub mod evaluation;
pub mod expert_lm;
pub mod kmeans;
pub mod pipeline;
pub mod recommender;
pub mod scalar;
pub mod sparse;
pub mod synthetic;
pub mod tokenizer;

pub use codec::CodecError;
pub use corpus::{corpus_stats, Corpus, QuoteRecord, QuoteType, SplitLabel, StatsReport};
pub use expert_lm::{AttributedDoc, ExpertMethod};
pub use recommender::{DocSpec, Method, Query, QueryMode, QuerySpec};
pub use scalar::Scalar;
pub use tokenizer::TokenizerConfig;

/// Default scalar for scores and metrics.
pub type Real = f64;

pub type SparseIndex = sparse::SparseIndex<Real>;
pub type VectorStore = dense::VectorStore<Real>;
pub type HnswIndex = dense::HnswIndex<Real>;
pub type LmStats = expert_lm::LmStats<Real>;
pub type ExpertRanking = expert_lm::ExpertRanking<Real>;
pub type RetrievalSet = recommender::RetrievalSet<Real>;
pub type ClusterModel = evaluation::ClusterModel<Real>;
pub type MetricsReport = evaluation::MetricsReport<Real>;

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Record(#[from] corpus::RecordError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
    #[error(transparent)]
    Annotator(#[from] annotator::AnnotatorError),
    #[error(transparent)]
    Sparse(#[from] sparse::SparseError),
    #[error(transparent)]
    Dense(#[from] dense::DenseError),
    #[error(transparent)]
    Lm(#[from] expert_lm::LmError),
    #[error(transparent)]
    Recommend(#[from] recommender::RecommendError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error(transparent)]
    KMeans(#[from] kmeans::KMeansError),
}
