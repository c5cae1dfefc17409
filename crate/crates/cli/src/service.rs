//! Read-only HTTP search over a loaded [`IndexSet`].

use std::cmp::Ordering;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::{Query as QueryParams, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use quotesource::recommender::{experts_from_documents, entity_display_name, RecommendError, DEFAULT_K, DEFAULT_W};
use quotesource::{Method, Query, Real};
use serde::{Deserialize, Serialize};

use crate::index::IndexSet;

pub const MAX_K: usize = 100;
pub const SUPPORT_PER_EXPERT: usize = 3;

/// Raw query-string parameters of `GET /experts`.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct SearchParams {
    pub q: Option<String>,
    pub method: Option<String>,
    pub k: Option<usize>,
    pub w: Option<usize>,
    /// Key of a stored query vector; required by the dense methods.
    pub qid: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchRequest {
    pub query: String,
    pub method: Method,
    pub k: usize,
    pub w: usize,
    pub qid: Option<String>,
}

impl TryFrom<SearchParams> for SearchRequest {
    type Error = ApiError;

    fn try_from(p: SearchParams) -> Result<Self, ApiError> {
        let query = p.q.unwrap_or_default().trim().to_owned();
        if query.is_empty() {
            return Err(ApiError::bad_request("query parameter q is empty"));
        }
        let method = match p.method.as_deref() {
            None | Some("") => Method::DrSparse,
            Some(m) => m.parse().map_err(|e: RecommendError| ApiError::bad_request(e.to_string()))?,
        };
        let k = p.k.unwrap_or(DEFAULT_K);
        if !(1..=MAX_K).contains(&k) {
            return Err(ApiError::bad_request(format!("k must be between 1 and {MAX_K}")));
        }
        let w = p.w.unwrap_or(DEFAULT_W);
        if w == 0 {
            return Err(ApiError::bad_request("w must be at least 1"));
        }
        Ok(SearchRequest { query, method, k, w, qid: p.qid })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportingQuote {
    pub doc_id: String,
    pub surface: String,
    pub quote: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertHit {
    pub rank: usize,
    pub expert: String,
    pub name: String,
    pub score: Real,
    pub supporting_quotes: Vec<SupportingQuote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub query: String,
    pub method: String,
    pub k: usize,
    pub experts: Vec<ExpertHit>,
    pub took_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    pub fn unavailable(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::SERVICE_UNAVAILABLE, message: message.into() }
    }
}

impl From<RecommendError> for ApiError {
    fn from(e: RecommendError) -> Self {
        match e {
            RecommendError::IndexMissing(_) => ApiError::unavailable(e.to_string()),
            RecommendError::UnknownDocId(_) => ApiError {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                message: e.to_string(),
            },
            other => ApiError::bad_request(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

fn support(set: &IndexSet, docs: impl Iterator<Item = String>) -> Vec<SupportingQuote> {
    docs.filter_map(|d| set.documents.get(&d))
        .take(SUPPORT_PER_EXPERT)
        .map(|e| SupportingQuote { doc_id: e.doc_id.clone(), surface: e.surface.clone(), quote: e.quote.clone() })
        .collect()
}

/// Answers one search against an immutable index set.
pub fn handle_search(req: &SearchRequest, set: &IndexSet) -> Result<SearchResponse, ApiError> {
    let started = Instant::now();
    let retrieval = &set.retrieval;
    if !retrieval.supports(req.method) {
        return Err(ApiError::unavailable(format!("index for {} is not loaded", req.method)));
    }
    let hits: Vec<(String, Real, Vec<SupportingQuote>)> = if req.method.is_expert_retrieval() {
        let text = req.query.split_whitespace().take(req.w).collect::<Vec<_>>().join(" ");
        let ranking = retrieval.recommend_query(&Query::text(text.as_str()), req.method, req.k)?;
        let lm = retrieval.lm.as_ref().expect("supported method has statistics");
        let terms = lm.query_terms(&text);
        ranking
            .entries
            .into_iter()
            .map(|(expert, score)| {
                let mut docs: Vec<(String, Real)> = set
                    .by_expert
                    .get(&expert)
                    .into_iter()
                    .flatten()
                    .filter_map(|d| {
                        let ll = lm.document_log_likelihood(&terms, d).ok().flatten()?;
                        Some((d.clone(), ll))
                    })
                    .collect();
                docs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
                let quotes = support(set, docs.into_iter().map(|(d, _)| d));
                (expert, score, quotes)
            })
            .collect()
    } else {
        let vector = if req.method.needs_vectors() {
            let qid = req
                .qid
                .as_deref()
                .ok_or_else(|| ApiError::bad_request(format!("{} needs qid naming a stored query vector", req.method)))?;
            Some(
                retrieval
                    .query_vector(qid)
                    .ok_or_else(|| ApiError::bad_request(format!("no stored query vector for {qid:?}")))?,
            )
        } else {
            None
        };
        let query = Query { text: req.query.clone(), vector };
        let docs = retrieval.retrieve_documents(&query, req.method, req.k)?;
        let ranking = experts_from_documents(&docs, &retrieval.doc_source)?;
        ranking
            .entries
            .into_iter()
            .map(|(expert, score)| {
                let own = docs
                    .iter()
                    .filter(|(d, _)| retrieval.doc_source.get(d) == Some(&expert))
                    .map(|(d, _)| d.clone());
                let quotes = support(set, own);
                (expert, score, quotes)
            })
            .collect()
    };
    let experts = hits
        .into_iter()
        .enumerate()
        .map(|(i, (expert, score, supporting_quotes))| ExpertHit {
            rank: i + 1,
            name: entity_display_name(&expert),
            expert,
            score,
            supporting_quotes,
        })
        .collect();
    Ok(SearchResponse {
        query: req.query.clone(),
        method: req.method.to_string(),
        k: req.k,
        experts,
        took_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Shared handle to the current index set. Readers clone the inner `Arc`
/// and search without holding the lock.
#[derive(Debug, Clone)]
pub struct AppState {
    current: Arc<RwLock<Arc<IndexSet>>>,
}

impl AppState {
    pub fn new(set: IndexSet) -> Self {
        AppState { current: Arc::new(RwLock::new(Arc::new(set))) }
    }

    pub fn snapshot(&self) -> Arc<IndexSet> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Swaps in a new set; in-flight requests finish on the old one.
    pub fn replace(&self, set: IndexSet) {
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(set);
    }
}

async fn experts(State(state): State<AppState>, QueryParams(params): QueryParams<SearchParams>) -> Response {
    let req = match SearchRequest::try_from(params) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let set = state.snapshot();
    match tokio::task::spawn_blocking(move || handle_search(&req, &set)).await {
        Ok(Ok(body)) => Json(body).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message: e.to_string() }.into_response(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub ready: bool,
    pub documents: usize,
    pub methods: std::collections::BTreeMap<String, bool>,
}

async fn healthz(State(state): State<AppState>) -> Response {
    let set = state.snapshot();
    let methods: std::collections::BTreeMap<String, bool> =
        set.readiness().into_iter().map(|(m, r)| (m.to_owned(), r)).collect();
    let ready = methods.values().any(|&r| r);
    let status = if ready { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    (status, Json(Health { ready, documents: set.documents.len(), methods })).into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/experts", get(experts))
        .route("/healthz", get(healthz))
        .with_state(state)
}
