mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use tower::ServiceExt;

use common::{horse, kitchen_index, p};
use horse::config::EngineConfig;
use horse::service::{router, AppState, Engine};

async fn get(state: &AppState, uri: &str) -> (StatusCode, Vec<u8>, String) {
    let resp = router(state.clone())
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let ctype = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body, ctype)
}

async fn get_json(state: &AppState, uri: &str) -> (StatusCode, serde_json::Value) {
    let (status, body, ctype) = get(state, uri).await;
    assert!(ctype.starts_with("application/json"), "{uri}: {ctype}");
    (status, serde_json::from_slice(&body).unwrap())
}

fn kitchen_state(dir: &std::path::Path) -> AppState {
    let idx = kitchen_index(dir);
    let engine = Engine::open(&idx, &EngineConfig::default()).unwrap();
    AppState::new(Some(Arc::new(engine)), dir)
}

#[tokio::test]
async fn search_echoes_the_parsed_graph() {
    let dir = tempfile::tempdir().unwrap();
    let state = kitchen_state(dir.path());
    let (status, v) = get_json(&state, "/api/search?q=red+ball").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["parsed"]["nodes"][0]["label"], "ball");
    assert_eq!(v["parsed"]["nodes"][0]["color"], "red");
    let ids: Vec<&str> = v["results"].as_array().unwrap().iter().map(|r| r["image_id"].as_str().unwrap()).collect();
    assert_eq!(ids[..2], ["kitchen-1", "kitchen-3"]);

    let (status, v) = get_json(&state, "/api/search?q=red+ball+on+table&mode=strict&k=5").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["results"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn malformed_requests_are_json_400s() {
    let dir = tempfile::tempdir().unwrap();
    let state = kitchen_state(dir.path());
    let (status, v) = get_json(&state, "/api/search?q=ball+on").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "parse_error");
    assert_eq!(v["position"], 7);

    for uri in [
        "/api/search?q=",
        "/api/search",
        "/api/search?q=ball&k=many",
        "/api/search?q=ball&k=0",
        "/api/search?q=ball&mode=fuzzy",
        "/api/priors?subject=ball",
    ] {
        let (status, v) = get_json(&state, uri).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        assert!(v["message"].is_string(), "{uri}");
    }
}

#[tokio::test]
async fn images_explain_and_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let state = kitchen_state(dir.path());
    let (status, v) = get_json(&state, "/api/images/kitchen-3").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["objects"][0]["label"], "ball");

    let (status, v) = get_json(&state, "/api/explain?image=kitchen-1&q=red+ball+on+table").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["score"], 1.0);
    assert_eq!(v["satisfied"].as_array().unwrap().len(), 4);

    for uri in ["/api/images/nope", "/api/explain?image=nope&q=ball", "/api/images/kitchen-1/file", "/api/v2"] {
        let (status, v) = get_json(&state, uri).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(v["error"], "not_found");
    }
}

#[tokio::test]
async fn image_files_resolve_against_the_root() {
    let dir = tempfile::tempdir().unwrap();
    let state = kitchen_state(dir.path());
    let (status, _) = get_json(&state, "/api/images/kitchen-3/file").await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    std::fs::create_dir(dir.path().join("pics")).unwrap();
    std::fs::write(dir.path().join("pics/k3.png"), b"\x89PNG fake").unwrap();
    let (status, body, ctype) = get(&state, "/api/images/kitchen-3/file").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype, "image/png");
    assert_eq!(body, b"\x89PNG fake");
}

#[tokio::test]
async fn stats_anomalies_and_priors() {
    let dir = tempfile::tempdir().unwrap();
    let (idx, _) = common::synthetic_index(dir.path());
    let engine = Engine::open(&idx, &EngineConfig::default()).unwrap();
    let state = AppState::new(Some(Arc::new(engine)), dir.path());

    let (status, v) = get_json(&state, "/api/stats").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["images"], 100);

    let (status, v) = get_json(&state, "/api/anomalies?k=3").await;
    assert_eq!(status, StatusCode::OK);
    let reports = v.as_array().unwrap();
    assert_eq!(reports.len(), 3);
    assert!(reports[0]["uniqueness"].as_f64() >= reports[1]["uniqueness"].as_f64());

    let (status, v) = get_json(&state, "/api/priors?subject=car&object=ground").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["object"], "ground");
    let (status, v) = get_json(&state, "/api/priors").await;
    assert_eq!(status, StatusCode::OK);
    assert!(v.is_object());
}

#[tokio::test]
async fn missing_index_is_503() {
    let state = AppState::new(None, ".");
    for uri in ["/api/search?q=ball", "/api/stats", "/api/anomalies"] {
        let (status, v) = get_json(&state, uri).await;
        assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{uri}");
        assert_eq!(v["error"], "index_unavailable");
    }
}

#[tokio::test]
async fn cli_and_http_agree() {
    let dir = tempfile::tempdir().unwrap();
    let state = kitchen_state(dir.path());
    let idx = dir.path().join("kitchen-index");

    let (_, http) = get_json(&state, "/api/search?q=ball+on+a+table&k=3").await;
    let (code, out, _) = horse(&["search", "--index", p(&idx), "--json", "--k", "3", "ball on a table"]);
    assert_eq!(code, 0);
    assert_eq!(http, serde_json::from_str::<serde_json::Value>(&out).unwrap());

    let (_, http) = get_json(&state, "/api/explain?image=kitchen-2&q=red+ball").await;
    let (_, out, _) = horse(&["explain", "--index", p(&idx), "--image", "kitchen-2", "--json", "red ball"]);
    assert_eq!(http, serde_json::from_str::<serde_json::Value>(&out).unwrap());
}
