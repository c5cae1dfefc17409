mod common;

use std::collections::HashSet;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use quotesource::RetrievalSet;
use quotesource_cli::index::{read_documents, IndexSet};
use quotesource_cli::service::{handle_search, router, AppState, Health, SearchParams, SearchRequest, SearchResponse};
use tower::ServiceExt;

async fn get(state: &AppState, uri: &str) -> (StatusCode, Vec<u8>) {
    let response = router(state.clone())
        .oneshot(Request::builder().uri(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = response.status();
    (status, response.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn encode(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join("+")
}

fn sparse_only(dir: &std::path::Path) -> IndexSet {
    let mut set = IndexSet::load(&dir.join("index")).unwrap();
    set.retrieval.lm = None;
    set.retrieval.vectors = None;
    set.retrieval.hnsw = None;
    set
}

fn check_response(body: &SearchResponse, set: &IndexSet, k: usize) {
    assert!(body.experts.len() <= k);
    let unique: HashSet<&str> = body.experts.iter().map(|e| e.expert.as_str()).collect();
    assert_eq!(unique.len(), body.experts.len());
    for (i, hit) in body.experts.iter().enumerate() {
        assert_eq!(hit.rank, i + 1);
        assert!(hit.supporting_quotes.len() <= 3);
        for q in &hit.supporting_quotes {
            assert_eq!(set.documents[&q.doc_id].expert, hit.expert);
        }
    }
    assert!(body.experts.windows(2).all(|w| w[0].score >= w[1].score));
}

#[tokio::test]
async fn sparse_search_answers_with_supported_experts() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::build_all(dir.path());
    let state = AppState::new(sparse_only(dir.path()));
    let query = &data.test[0];
    let (status, body) = get(&state, &format!("/experts?q={}&k=5", encode(&query.title))).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let body: SearchResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(body.method, "dr_sparse");
    assert!(!body.experts.is_empty());
    assert!(body.experts.iter().all(|e| !e.supporting_quotes.is_empty()));
    check_response(&body, &state.snapshot(), 5);
    assert!(body.took_ms >= 0.0);
}

#[tokio::test]
async fn invalid_requests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    common::build_all(dir.path());
    let state = AppState::new(sparse_only(dir.path()));
    for uri in [
        "/experts",
        "/experts?q=",
        "/experts?q=+++",
        "/experts?q=vaccine&k=0",
        "/experts?q=vaccine&k=101",
        "/experts?q=vaccine&method=bm42",
        "/experts?q=vaccine&w=0",
    ] {
        let (status, body) = get(&state, uri).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        let err: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert!(err["error"].is_string());
    }
}

#[tokio::test]
async fn missing_indices_report_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    common::build_all(dir.path());
    let state = AppState::new(sparse_only(dir.path()));
    for method in ["dr_hnsw", "dr_flat", "er_candidate", "er_document"] {
        let (status, _) = get(&state, &format!("/experts?q=topic0term1&method={method}&qid=x")).await;
        assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{method}");
    }
    let (status, body) = get(&state, "/healthz").await;
    assert_eq!(status, StatusCode::OK);
    let health: Health = serde_json::from_slice(&body).unwrap();
    assert!(health.ready);
    assert!(health.methods["dr_sparse"]);
    assert!(!health.methods["dr_hnsw"]);

    let empty = AppState::new(IndexSet::from_parts(read_documents(&dir.path().join("index")).unwrap(), RetrievalSet::default()));
    let (status, body) = get(&empty, "/healthz").await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let health: Health = serde_json::from_slice(&body).unwrap();
    assert!(!health.ready);
    let (status, _) = get(&empty, "/experts?q=anything").await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn every_method_serves_after_a_swap() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::build_all(dir.path());
    let state = AppState::new(sparse_only(dir.path()));
    let query = &data.test[3];
    let hnsw = format!("/experts?q=ignored&method=dr_hnsw&qid={}", query.record_id);
    assert_eq!(get(&state, &hnsw).await.0, StatusCode::SERVICE_UNAVAILABLE);

    state.replace(IndexSet::load(&dir.path().join("index")).unwrap());
    let set = state.snapshot();
    // in-vocabulary query text
    let text = encode(&data.train[5].quote.replace('"', ""));
    for method in ["dr_sparse", "dr_flat", "dr_hnsw", "er_candidate", "er_document"] {
        let uri = format!("/experts?q={text}&method={method}&k=4&qid={}", query.record_id);
        let (status, body) = get(&state, &uri).await;
        assert_eq!(status, StatusCode::OK, "{method}: {}", String::from_utf8_lossy(&body));
        let body: SearchResponse = serde_json::from_slice(&body).unwrap();
        assert!(!body.experts.is_empty(), "{method}");
        check_response(&body, &set, 4);
    }
    // dense methods on topic vectors find the query's own topic first
    let topic = |entity: &str| data.experts.iter().find(|e| e.entity == entity).unwrap().topic;
    let (_, body) = get(&state, &hnsw).await;
    let body: SearchResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(topic(&body.experts[0].expert), topic(&query.source_entity));

    let (status, _) = get(&state, "/experts?q=x&method=dr_flat").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = get(&state, "/experts?q=x&method=dr_flat&qid=unknown").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn concurrent_identical_requests_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::build_all(dir.path());
    let state = AppState::new(IndexSet::load(&dir.path().join("index")).unwrap());
    let uri = format!("/experts?q={}&method=er_document&k=10", encode(&data.train[1].quote.replace('"', "")));
    let handles: Vec<_> = (0..16)
        .map(|_| {
            let state = state.clone();
            let uri = uri.clone();
            tokio::spawn(async move { get(&state, &uri).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for h in handles {
        let (status, body) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        let mut v: serde_json::Value = serde_json::from_slice(&body).unwrap();
        v.as_object_mut().unwrap().remove("took_ms");
        bodies.push(v);
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn handle_search_mirrors_the_recommender() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::build_all(dir.path());
    let set = IndexSet::load(&dir.path().join("index")).unwrap();
    for record in data.test.iter().take(10) {
        let params = SearchParams { q: Some(record.title.clone()), method: Some("dr_sparse".into()), k: Some(7), ..Default::default() };
        let response = handle_search(&SearchRequest::try_from(params).unwrap(), &set).unwrap();
        let direct = set
            .retrieval
            .recommend_query(&quotesource::Query::text(record.title.as_str()), quotesource::Method::DrSparse, 7)
            .unwrap();
        let got: Vec<(&str, f64)> = response.experts.iter().map(|e| (e.expert.as_str(), e.score)).collect();
        let want: Vec<(&str, f64)> = direct.entries.iter().map(|(e, s)| (e.as_str(), *s)).collect();
        assert_eq!(got, want);
    }
}
