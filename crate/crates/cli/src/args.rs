//! Command-line grammar.

use std::net::SocketAddr;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use quotesource::recommender::{DEFAULT_EF_SEARCH, DEFAULT_K, DEFAULT_W};
use quotesource::{DocSpec, Method, QueryMode};

#[derive(Debug, Parser)]
#[command(name = "quotesource", version, about = "Quote-source expert recommendation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a record file, fill in missing quote types and rewrite it.
    Ingest(IngestArgs),
    /// Run trigger, source and duplicate filters over SRL sentence records.
    Filter(FilterArgs),
    /// Partition records chronologically into train/valid/test files.
    Split(SplitArgs),
    /// Print dataset statistics.
    Stats(StatsArgs),
    /// Build the BM25 index over attributed documents.
    BuildSparse(BuildArgs),
    /// Register an exported vector file and its HNSW parameters.
    BuildDense(BuildDenseArgs),
    /// Build expert language-model statistics.
    BuildLm(BuildArgs),
    /// Extract direct quotes and their sources with the rule-based annotator.
    Annotate(AnnotateArgs),
    /// Write token/tag sequence-labeling data.
    ExportBio(ExportArgs),
    /// Write extractive question-answering data.
    ExportQa(ExportQaArgs),
    /// Rank experts for every record of a query corpus and write a run.
    Recommend(RecommendArgs),
    /// Serve `GET /experts` and `GET /healthz` over the index directory.
    Serve(ServeArgs),
    /// Score a run against qrels, strict and (optionally) relaxed.
    Eval(EvalArgs),
    /// Write the bundled synthetic corpus with planted topics.
    Synthetic(SyntheticArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Newline-delimited SRL sentence objects.
    #[arg(long)]
    pub sentences: PathBuf,
    /// Trigger verbs, one lemma per line.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Allowed ontology classes, one per line.
    #[arg(long)]
    pub allowed: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub min_count: usize,
    #[arg(long, default_value_t = 0.8)]
    pub jaccard: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub valid_fraction: f64,
    /// Last train timestamp (RFC 3339); defaults to 2020-05-31T23:59:59Z.
    #[arg(long)]
    pub train_end: Option<DateTime<Utc>>,
    /// First valid/test timestamp (RFC 3339); defaults to 2020-06-21T00:00:00Z.
    #[arg(long)]
    pub valid_test_start: Option<DateTime<Utc>>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TokenizerChoice {
    /// Lowercase, stopwords removed, Snowball-stemmed.
    English,
    /// Lowercase word split only.
    Plain,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Training records; every record becomes one attributed document.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub index_dir: PathBuf,
    #[arg(long, default_value = "sentence", value_parser = parse_doc_mode)]
    pub doc_mode: DocSpec,
    #[arg(long, value_enum, default_value_t = TokenizerChoice::English)]
    pub tokenizer: TokenizerChoice,
}

#[derive(Debug, Args)]
pub struct BuildDenseArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub index_dir: PathBuf,
    /// Document vectors (SQV1), one per corpus record.
    #[arg(long)]
    pub vectors: PathBuf,
    /// Query vectors (SQV1) keyed by query record id.
    #[arg(long)]
    pub query_vectors: Option<PathBuf>,
    #[arg(long, default_value = "sentence", value_parser = parse_doc_mode)]
    pub doc_mode: DocSpec,
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    #[arg(long, default_value_t = 200)]
    pub ef_construction: usize,
    #[arg(long, default_value_t = DEFAULT_EF_SEARCH)]
    pub ef_search: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Search raw inner products instead of cosine similarity.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Records whose main sentences are annotated and scored against the
    /// stored source and quote.
    #[arg(long, conflicts_with = "text", required_unless_present = "text")]
    pub corpus: Option<PathBuf>,
    /// Plain sentences, one per line.
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QaSourceMode {
    /// Ask about the gold source surface form.
    True,
    /// Ask about the source the rule-based annotator predicts.
    Predicted,
    /// Ask about "they".
    Masked,
}

#[derive(Debug, Args)]
pub struct ExportQaArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = QaSourceMode::True)]
    pub source_mode: QaSourceMode,
    /// Trigger lexicon, needed for predicted sources.
    #[arg(long, required_if_eq("source_mode", "predicted"))]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    /// Query records (typically the test split).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub index_dir: PathBuf,
    #[arg(long, default_value = "dr_sparse", value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value = "title", value_parser = parse_query_mode)]
    pub query_mode: QueryMode,
    /// Word cap on expert-retrieval queries.
    #[arg(long, default_value_t = DEFAULT_W)]
    pub w: usize,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Leave the source's own name in the query.
    #[arg(long)]
    pub keep_source: bool,
    /// Run file; defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write one strict qrels line per query.
    #[arg(long)]
    pub qrels_out: Option<PathBuf>,
    /// Run tag; defaults to the method name.
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub index_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Records whose sources and ontology classes define relaxed clusters.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    pub clusters: usize,
    /// Number of most frequent categories used as cluster features.
    #[arg(long, default_value_t = 100)]
    pub categories: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: quotesource::recommender::RecommendError| e.to_string())
}

fn parse_query_mode(s: &str) -> Result<QueryMode, String> {
    s.parse()
}

fn parse_doc_mode(s: &str) -> Result<DocSpec, String> {
    s.parse()
}
