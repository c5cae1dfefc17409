//! Subcommand implementations. Human-readable summaries go to `log`;
//! data goes to the files named on the command line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use quotesource::annotator::{classify_quote_text, classify_quote_type, extract_direct, to_bio, to_qa, SourceMode};
use quotesource::dense::load_vectors;
use quotesource::evaluation::{build_cluster_model, evaluate_run, extraction_scores, Qrels, Run};
use quotesource::pipeline::{chronological_split, run_filters, SourcePolicy, SplitBoundaries, SrlSentence, TriggerLexicon};
use quotesource::recommender::{attributed_documents, form_document, write_run};
use quotesource::synthetic::{generate, SyntheticConfig};
use quotesource::{
    corpus_stats, Corpus, HnswIndex, LmStats, QuerySpec, QuoteRecord, SparseIndex, SplitLabel, TokenizerConfig,
};

use crate::args::*;
use crate::index::*;
use crate::service::{router, AppState};

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load(path, SplitLabel::Unsplit).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn open_lines(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn tokenizer(choice: TokenizerChoice) -> TokenizerConfig {
    match choice {
        TokenizerChoice::English => TokenizerConfig::english(),
        TokenizerChoice::Plain => TokenizerConfig::plain(),
    }
}

fn write_jsonl<W: Write, S: serde::Serialize>(out: &mut W, item: &S) -> Result<()> {
    serde_json::to_writer(&mut *out, item)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn ingest(a: &IngestArgs, log: &mut dyn Write) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let mut filled = 0;
    let records: Vec<QuoteRecord> = corpus
        .into_records()
        .into_iter()
        .map(|mut r| {
            if r.quote_type.is_none() {
                r.quote_type = Some(classify_quote_type(&r));
                filled += 1;
            }
            r
        })
        .collect();
    let corpus = Corpus::new(records, SplitLabel::Unsplit)?;
    let mut out = create(&a.out)?;
    corpus.write(&mut out)?;
    out.flush()?;
    writeln!(log, "ingested {} records ({filled} quote types inferred) -> {}", corpus.len(), a.out.display())?;
    Ok(())
}

pub fn filter(a: &FilterArgs, log: &mut dyn Write) -> Result<()> {
    let lexicon = TriggerLexicon::read(open_lines(&a.lexicon)?)?;
    let policy = SourcePolicy::read(open_lines(&a.allowed)?, a.min_count)?;
    let mut sentences = Vec::new();
    for (i, line) in open_lines(&a.sentences)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        sentences.push(SrlSentence::parse(&line).with_context(|| format!("{} line {}", a.sentences.display(), i + 1))?);
    }
    let kept = run_filters(&sentences, &lexicon, &policy, a.jaccard)?;
    let mut out = create(&a.out)?;
    for c in &kept {
        write_jsonl(&mut out, c)?;
    }
    out.flush()?;
    writeln!(log, "{} sentences -> {} candidates -> {}", sentences.len(), kept.len(), a.out.display())?;
    Ok(())
}

pub fn split(a: &SplitArgs, log: &mut dyn Write) -> Result<()> {
    let defaults = SplitBoundaries::default();
    let boundaries = SplitBoundaries::new(
        a.train_end.unwrap_or(defaults.train_end),
        a.valid_test_start.unwrap_or(defaults.valid_test_start),
        a.valid_fraction,
    )?;
    let records = load_corpus(&a.corpus)?.into_records();
    let (train, valid, test) = chronological_split(records, &boundaries, a.seed)?;
    for (name, part) in [("train", &train), ("valid", &valid), ("test", &test)] {
        let path = a.out_dir.join(format!("{name}.jsonl"));
        let mut out = create(&path)?;
        part.write(&mut out)?;
        out.flush()?;
        writeln!(log, "{name}: {} records -> {}", part.len(), path.display())?;
    }
    Ok(())
}

pub fn stats(a: &StatsArgs, log: &mut dyn Write) -> Result<()> {
    let report = corpus_stats(&load_corpus(&a.corpus)?)?;
    if a.json {
        writeln!(log, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        writeln!(log, "{report}")?;
    }
    Ok(())
}

fn documents_for(corpus: &Corpus, spec: quotesource::DocSpec) -> Vec<DocumentEntry> {
    corpus.records().iter().map(|r| DocumentEntry::from_record(r, spec)).collect()
}

pub fn build_sparse(a: &BuildArgs, log: &mut dyn Write) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let index = SparseIndex::build(
        corpus.records().iter().map(|r| form_document(r, a.doc_mode)),
        tokenizer(a.tokenizer),
    )?;
    write_documents(&a.index_dir, &documents_for(&corpus, a.doc_mode))?;
    index.save(a.index_dir.join(SPARSE_FILE))?;
    writeln!(log, "sparse index: {} documents -> {}", corpus.len(), a.index_dir.join(SPARSE_FILE).display())?;
    Ok(())
}

pub fn build_lm(a: &BuildArgs, log: &mut dyn Write) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let stats = LmStats::build(attributed_documents(corpus.records(), a.doc_mode), tokenizer(a.tokenizer))?;
    write_documents(&a.index_dir, &documents_for(&corpus, a.doc_mode))?;
    stats.save(a.index_dir.join(LM_FILE))?;
    writeln!(log, "expert statistics: {} documents -> {}", corpus.len(), a.index_dir.join(LM_FILE).display())?;
    Ok(())
}

pub fn build_dense(a: &BuildDenseArgs, log: &mut dyn Write) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let normalize = !a.no_normalize;
    let store = load_vectors(&a.vectors, normalize).with_context(|| format!("reading {}", a.vectors.display()))?;
    if let Some(id) = store.doc_ids().iter().find(|id| corpus.get(id).is_none()) {
        bail!("vector {id:?} has no record in {}", a.corpus.display());
    }
    if store.len() != corpus.len() {
        bail!("{} vectors for {} records", store.len(), corpus.len());
    }
    let meta = DenseMeta {
        normalize,
        hnsw: quotesource::dense::HnswParams { m: a.m, ef_construction: a.ef_construction, seed: a.seed, ..Default::default() },
        ef_search: a.ef_search,
        model: store.model().to_owned(),
        count: store.len(),
    };
    let index = HnswIndex::build(store, meta.hnsw)?;
    index.check_invariants().map_err(anyhow::Error::msg)?;

    write_documents(&a.index_dir, &documents_for(&corpus, a.doc_mode))?;
    std::fs::copy(&a.vectors, a.index_dir.join(DENSE_FILE))?;
    if let Some(q) = &a.query_vectors {
        let queries: quotesource::VectorStore = load_vectors(q, normalize)?;
        if queries.dim() != index.store().dim() {
            bail!("query vectors have dim {} but documents have dim {}", queries.dim(), index.store().dim());
        }
        std::fs::copy(q, a.index_dir.join(QUERY_VECTORS_FILE))?;
    }
    std::fs::write(a.index_dir.join(DENSE_META_FILE), serde_json::to_string_pretty(&meta)?)?;
    writeln!(log, "dense index: {} vectors of dim {} ({}) -> {}", meta.count, index.store().dim(), meta.model, a.index_dir.display())?;
    Ok(())
}

#[derive(serde::Serialize)]
struct Annotation<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    record_id: Option<&'a str>,
    sentence: &'a str,
    source: Option<String>,
    quote: Option<String>,
    trigger: Option<String>,
    quote_type: Option<quotesource::QuoteType>,
}

pub fn annotate(a: &AnnotateArgs, log: &mut dyn Write) -> Result<()> {
    let lexicon = TriggerLexicon::read(open_lines(&a.lexicon)?)?;
    let mut out = output(a.out.as_deref())?;
    let annotate_one = |record_id: Option<&str>, sentence: &str, out: &mut dyn Write| -> Result<Option<(String, String)>> {
        let found = extract_direct(sentence, &lexicon).ok().flatten();
        let row = Annotation {
            record_id,
            sentence,
            source: found.as_ref().map(|f| f.source.clone()),
            quote: found.as_ref().map(|f| f.quote.clone()),
            trigger: found.as_ref().map(|f| f.trigger.clone()),
            quote_type: found.as_ref().map(|f| classify_quote_text(&f.quote)),
        };
        serde_json::to_writer(&mut *out, &row)?;
        out.write_all(b"\n")?;
        Ok(found.map(|f| (f.source, f.quote)))
    };
    if let Some(path) = &a.corpus {
        let corpus = load_corpus(path)?;
        let mut sources = Vec::new();
        let mut quotes = Vec::new();
        for r in corpus.records() {
            let (s, q) = annotate_one(Some(&r.record_id), &r.main_sentence, &mut out)?.unwrap_or_default();
            sources.push((s, r.source_surface.clone()));
            quotes.push((q, r.quote.clone()));
        }
        out.flush()?;
        let (sem, sf1): (f64, f64) = extraction_scores(&sources);
        let (qem, qf1): (f64, f64) = extraction_scores(&quotes);
        writeln!(
            log,
            "{} records: source EM {sem:.4} F1 {sf1:.4}; quote EM {qem:.4} F1 {qf1:.4}",
            corpus.len()
        )?;
    } else if let Some(path) = &a.text {
        let (mut n, mut hits) = (0, 0);
        for line in open_lines(path)?.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            n += 1;
            hits += usize::from(annotate_one(None, &line, &mut out)?.is_some());
        }
        out.flush()?;
        writeln!(log, "{n} sentences, {hits} attributed")?;
    }
    Ok(())
}

pub fn export_bio(a: &ExportArgs, log: &mut dyn Write) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let mut out = create(&a.out)?;
    let mut skipped = 0;
    for r in corpus.records() {
        match to_bio(r) {
            Ok(seq) => seq.write_conll(&mut out)?,
            Err(_) => skipped += 1,
        }
    }
    out.flush()?;
    writeln!(log, "{} sequences ({skipped} skipped: spans not found) -> {}", corpus.len() - skipped, a.out.display())?;
    Ok(())
}

pub fn export_qa(a: &ExportQaArgs, log: &mut dyn Write) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let lexicon = match &a.lexicon {
        Some(p) => Some(TriggerLexicon::read(open_lines(p)?)?),
        None => None,
    };
    let mode = match a.source_mode {
        QaSourceMode::True => SourceMode::TrueSource,
        QaSourceMode::Predicted => SourceMode::PredictedSource,
        QaSourceMode::Masked => SourceMode::Masked,
    };
    let mut out = create(&a.out)?;
    let (mut written, mut skipped) = (0, 0);
    for r in corpus.records() {
        let predicted = lexicon
            .as_ref()
            .and_then(|lex| extract_direct(&r.main_sentence, lex).ok().flatten())
            .map(|f| f.source);
        match to_qa(r, mode, predicted.as_deref()) {
            Ok((source_q, quote_q)) => {
                write_jsonl(&mut out, &source_q)?;
                write_jsonl(&mut out, &quote_q)?;
                written += 2;
            }
            Err(_) => skipped += 1,
        }
    }
    out.flush()?;
    writeln!(log, "{written} examples ({skipped} records skipped) -> {}", a.out.display())?;
    Ok(())
}

pub fn recommend(a: &RecommendArgs, log: &mut dyn Write) -> Result<()> {
    let set = IndexSet::load(&a.index_dir)?;
    let queries = load_corpus(&a.corpus)?;
    let spec = QuerySpec { mode: a.query_mode, w: Some(a.w), strip_source: !a.keep_source };
    spec.validate()?;
    let tag = a.tag.clone().unwrap_or_else(|| a.method.to_string());
    let mut out = output(a.out.as_deref())?;
    let mut qrels = Qrels::default();
    let mut skipped = 0;
    for r in queries.records() {
        match set.retrieval.recommend(r, a.method, &spec, a.k) {
            Ok(ranking) => write_run(&mut out, &r.record_id, &ranking, &tag)?,
            Err(quotesource::recommender::RecommendError::EmptyField(_))
            | Err(quotesource::recommender::RecommendError::EmptyQuery) => skipped += 1,
            Err(e) => return Err(e).with_context(|| format!("query {}", r.record_id)),
        }
        qrels.relevant.insert(r.record_id.clone(), r.source_entity.clone());
    }
    out.flush()?;
    if let Some(path) = &a.qrels_out {
        let mut q = create(path)?;
        qrels.write(&mut q)?;
        q.flush()?;
    }
    writeln!(log, "{}: {} queries ranked, {skipped} with an empty query", a.method, queries.len() - skipped)?;
    Ok(())
}

pub fn eval(a: &EvalArgs, log: &mut dyn Write) -> Result<()> {
    let run = Run::read(open_lines(&a.run)?)?;
    let qrels = Qrels::read(open_lines(&a.qrels)?)?;
    let clusters = match &a.corpus {
        Some(path) => {
            let mut sources: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for r in load_corpus(path)?.records() {
                let cats = sources.entry(r.source_entity.clone()).or_default();
                for c in &r.ontology_classes {
                    if !cats.contains(c) {
                        cats.push(c.clone());
                    }
                }
            }
            Some(build_cluster_model::<f64>(&sources, a.categories, a.clusters, a.seed)?)
        }
        None => None,
    };
    let report = evaluate_run(&run, &qrels, clusters.as_ref())?;
    if a.json {
        writeln!(log, "{}", report.to_json())?;
    } else {
        writeln!(log, "{report}")?;
    }
    Ok(())
}

pub fn synthetic(a: &SyntheticArgs, log: &mut dyn Write) -> Result<()> {
    let data = generate(&SyntheticConfig { seed: a.seed, ..SyntheticConfig::default() });
    for (name, records) in [("train", &data.train), ("test", &data.test)] {
        let path = a.out_dir.join(format!("{name}.jsonl"));
        let mut out = create(&path)?;
        Corpus::new(records.clone(), SplitLabel::Unsplit)?.write(&mut out)?;
        out.flush()?;
        writeln!(log, "{name}: {} records -> {}", records.len(), path.display())?;
    }
    let path = a.out_dir.join("qrels.txt");
    let mut out = create(&path)?;
    data.qrels().write(&mut out)?;
    out.flush()?;
    writeln!(log, "qrels: {} queries -> {}", data.test.len(), path.display())?;
    Ok(())
}

pub async fn serve(a: &ServeArgs, log: &mut (dyn Write + Send)) -> Result<()> {
    let state = AppState::new(IndexSet::load(&a.index_dir)?);
    spawn_reload_on_hangup(state.clone(), a.index_dir.clone());
    let listener = tokio::net::TcpListener::bind(a.addr).await?;
    writeln!(log, "listening on http://{}", listener.local_addr()?)?;
    log.flush()?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[cfg(unix)]
fn spawn_reload_on_hangup(state: AppState, dir: std::path::PathBuf) {
    use tokio::signal::unix::{signal, SignalKind};
    tokio::spawn(async move {
        let Ok(mut hangups) = signal(SignalKind::hangup()) else { return };
        while hangups.recv().await.is_some() {
            match IndexSet::load(&dir) {
                Ok(set) => {
                    state.replace(set);
                    eprintln!("reloaded {}", dir.display());
                }
                Err(e) => eprintln!("reload failed, keeping current indices: {e:#}"),
            }
        }
    });
}

#[cfg(not(unix))]
fn spawn_reload_on_hangup(_: AppState, _: std::path::PathBuf) {}

pub async fn dispatch(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut log = stdout.lock();
    match &cli.command {
        Command::Ingest(a) => ingest(a, &mut log),
        Command::Filter(a) => filter(a, &mut log),
        Command::Split(a) => split(a, &mut log),
        Command::Stats(a) => stats(a, &mut log),
        Command::BuildSparse(a) => build_sparse(a, &mut log),
        Command::BuildDense(a) => build_dense(a, &mut log),
        Command::BuildLm(a) => build_lm(a, &mut log),
        Command::Annotate(a) => annotate(a, &mut io::stderr()),
        Command::ExportBio(a) => export_bio(a, &mut log),
        Command::ExportQa(a) => export_qa(a, &mut log),
        Command::Recommend(a) => recommend(a, &mut io::stderr()),
        Command::Eval(a) => eval(a, &mut log),
        Command::Synthetic(a) => synthetic(a, &mut log),
        Command::Serve(a) => {
            drop(log);
            serve(a, &mut io::stdout()).await
        }
    }
}
