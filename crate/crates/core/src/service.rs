//! Engine facade shared by the CLI and the HTTP API, and the axum router.
//!
//! Endpoints (all JSON):
//!
//! ```text
//! GET /api/search?q=&k=&mode=     {results, parsed}
//! GET /api/explain?image=&q=      MatchResult with evidence
//! GET /api/images/{id}            SceneGraph
//! GET /api/images/{id}/file       image bytes, when image_uri names a local file
//! GET /api/anomalies?k=           [TypicalityReport]
//! GET /api/stats                  IndexStats
//! GET /api/priors?subject=&object= PairStats (full dump without parameters)
//! ```
//!
//! Errors are `{error, message, position?}` with a 4xx/5xx status.

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::index::{IndexError, IndexHandle, IndexStats};
use crate::matcher::{self, MatchError, MatchMode, MatchResult, SearchOptions};
use crate::priors::{rank_by_uniqueness, TypicalityReport};
use crate::query::{self, ParseError, QueryGraph};
use crate::scene::SceneGraph;
use crate::vocab::{VocabError, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub results: Vec<MatchResult>,
    pub parsed: QueryGraph,
}

/// Error payload of the HTTP API, also used for CLI diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
}

impl ApiError {
    pub fn new(status: u16, error: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            error: error.into(),
            message: message.into(),
            position: None,
        }
    }

    pub fn unavailable() -> Self {
        ApiError::new(503, "index_unavailable", "no index is loaded")
    }
}

impl From<ParseError> for ApiError {
    fn from(e: ParseError) -> Self {
        let mut out = ApiError::new(
            400,
            match e {
                ParseError::EmptyQuery => "empty_query",
                ParseError::Syntax { .. } => "parse_error",
            },
            e.to_string(),
        );
        out.position = e.position();
        out
    }
}

impl From<MatchError> for ApiError {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::QueryTooLarge { .. } => ApiError::new(400, "query_too_large", e.to_string()),
            MatchError::NotFound(_) => ApiError::new(404, "not_found", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// An opened index plus the vocabulary used to parse queries against it.
#[derive(Debug)]
pub struct Engine {
    handle: IndexHandle,
    vocab: Vocabulary,
    warnings: Vec<String>,
    ranking: OnceLock<Vec<TypicalityReport>>,
}

impl Engine {
    /// Wraps an index. Multiword labels of the corpus become known nouns.
    pub fn new(handle: IndexHandle, vocab: Vocabulary) -> Self {
        let labels: Vec<String> = handle
            .terms_with_prefix("label:")
            .map(|t| t["label:".len()..].to_string())
            .collect();
        Engine {
            vocab: vocab.with_compounds(labels),
            handle,
            warnings: Vec::new(),
            ranking: OnceLock::new(),
        }
    }

    /// Opens `dir`, comparing its stored settings with `config`.
    pub fn open(dir: &Path, config: &EngineConfig) -> Result<Self, EngineError> {
        let vocab = match &config.vocab_path {
            Some(p) => Vocabulary::load(p)?,
            None => Vocabulary::default(),
        };
        let (handle, warnings) = IndexHandle::open_checked(dir, config)?;
        let mut engine = Engine::new(handle, vocab);
        engine.warnings = warnings;
        Ok(engine)
    }

    pub fn handle(&self) -> &IndexHandle {
        &self.handle
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Settings that differ between the index and the requested config.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn parse(&self, text: &str) -> Result<QueryGraph, ParseError> {
        query::parse(text, &self.vocab)
    }

    pub fn search(&self, text: &str, k: usize, mode: MatchMode) -> Result<SearchResponse, ApiError> {
        if k == 0 {
            return Err(ApiError::new(400, "bad_request", "k must be at least 1"));
        }
        let parsed = self.parse(text)?;
        let opts = SearchOptions {
            k,
            mode,
            weights: self.handle.config().matching.clone(),
            ..SearchOptions::default()
        };
        let results = matcher::search_with(&self.handle, &parsed, &opts)?.results;
        Ok(SearchResponse { results, parsed })
    }

    pub fn explain(&self, image_id: &str, text: &str) -> Result<MatchResult, ApiError> {
        if self.handle.document(image_id).is_none() {
            return Err(MatchError::NotFound(image_id.to_string()).into());
        }
        let parsed = self.parse(text)?;
        Ok(matcher::explain(&self.handle, image_id, &parsed)?)
    }

    pub fn image(&self, image_id: &str) -> Result<&SceneGraph, ApiError> {
        self.handle
            .document(image_id)
            .ok_or_else(|| MatchError::NotFound(image_id.to_string()).into())
    }

    /// The `k` most unique images. The full ranking is computed once.
    pub fn anomalies(&self, k: usize) -> Vec<TypicalityReport> {
        let ranking = self.ranking.get_or_init(|| {
            rank_by_uniqueness(
                self.handle.priors(),
                self.handle.documents(),
                &self.handle.config().scoring,
            )
        });
        ranking.iter().take(k).cloned().collect()
    }

    pub fn stats(&self) -> &IndexStats {
        self.handle.stats()
    }

    pub fn priors(&self, subject: Option<&str>, object: Option<&str>) -> Result<serde_json::Value, ApiError> {
        let priors = self.handle.priors();
        let value = match (subject, object) {
            (Some(s), Some(o)) => {
                serde_json::to_value(priors.pair_stats(&self.vocab.canon_label(s), &self.vocab.canon_label(o)))
            }
            (None, None) => serde_json::to_value(priors.dump()),
            _ => {
                return Err(ApiError::new(
                    400,
                    "bad_request",
                    "give both subject and object, or neither",
                ))
            }
        };
        Ok(value.expect("priors serialize"))
    }
}

#[derive(Clone)]
pub struct AppState {
    engine: Option<Arc<Engine>>,
    image_root: PathBuf,
}

impl AppState {
    pub fn new(engine: Option<Arc<Engine>>, image_root: impl Into<PathBuf>) -> Self {
        AppState {
            engine,
            image_root: image_root.into(),
        }
    }

    fn engine(&self) -> Result<&Engine, ApiError> {
        self.engine.as_deref().ok_or_else(ApiError::unavailable)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/search", get(search_handler))
        .route("/api/explain", get(explain_handler))
        .route("/api/images/{id}", get(image_handler))
        .route("/api/images/{id}/file", get(image_file_handler))
        .route("/api/anomalies", get(anomalies_handler))
        .route("/api/stats", get(stats_handler))
        .route("/api/priors", get(priors_handler))
        .fallback(|| async { ApiError::new(404, "not_found", "no such endpoint") })
        .with_state(state)
}

#[derive(Debug, Deserialize)]
struct SearchParams {
    q: Option<String>,
    k: Option<String>,
    mode: Option<String>,
}

fn parse_k(k: Option<String>, default: usize) -> Result<usize, ApiError> {
    match k.as_deref() {
        None | Some("") => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ApiError::new(400, "bad_request", format!("k must be a positive integer, got `{v}`"))),
    }
}

fn required(v: Option<String>, name: &str) -> Result<String, ApiError> {
    v.ok_or_else(|| ApiError::new(400, "bad_request", format!("missing `{name}` parameter")))
}

async fn search_handler(
    State(state): State<AppState>,
    Query(p): Query<SearchParams>,
) -> Result<Json<SearchResponse>, ApiError> {
    let engine = state.engine()?;
    let q = required(p.q, "q")?;
    let mode = match p.mode.as_deref() {
        None | Some("") => MatchMode::Ranked,
        Some(m) => m.parse().map_err(|e: String| ApiError::new(400, "bad_request", e))?,
    };
    Ok(Json(engine.search(&q, parse_k(p.k, 20)?, mode)?))
}

#[derive(Debug, Deserialize)]
struct ExplainParams {
    image: Option<String>,
    q: Option<String>,
}

async fn explain_handler(
    State(state): State<AppState>,
    Query(p): Query<ExplainParams>,
) -> Result<Json<MatchResult>, ApiError> {
    let engine = state.engine()?;
    let image = required(p.image, "image")?;
    let q = required(p.q, "q")?;
    Ok(Json(engine.explain(&image, &q)?))
}

async fn image_handler(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SceneGraph>, ApiError> {
    Ok(Json(state.engine()?.image(&id)?.clone()))
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("svg") => "image/svg+xml",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

async fn image_file_handler(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let engine = match state.engine() {
        Ok(e) => e,
        Err(e) => return e.into_response(),
    };
    let graph = match engine.image(&id) {
        Ok(g) => g,
        Err(e) => return e.into_response(),
    };
    let no_file = || ApiError::new(404, "not_found", format!("image `{id}` has no local file")).into_response();
    let Some(uri) = graph.image_uri.as_deref() else {
        return no_file();
    };
    if uri.contains("://") && !uri.starts_with("file://") {
        return no_file();
    }
    let path = Path::new(uri.strip_prefix("file://").unwrap_or(uri));
    let path = if path.is_absolute() {
        path.to_path_buf()
    } else {
        state.image_root.join(path)
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => no_file(),
    }
}

#[derive(Debug, Deserialize)]
struct KParam {
    k: Option<String>,
}

async fn anomalies_handler(
    State(state): State<AppState>,
    Query(p): Query<KParam>,
) -> Result<Json<Vec<TypicalityReport>>, ApiError> {
    Ok(Json(state.engine()?.anomalies(parse_k(p.k, 10)?)))
}

async fn stats_handler(State(state): State<AppState>) -> Result<Json<IndexStats>, ApiError> {
    Ok(Json(state.engine()?.stats().clone()))
}

#[derive(Debug, Deserialize)]
struct PriorParams {
    subject: Option<String>,
    object: Option<String>,
}

async fn priors_handler(
    State(state): State<AppState>,
    Query(p): Query<PriorParams>,
) -> Result<Json<serde_json::Value>, ApiError> {
    Ok(Json(state.engine()?.priors(p.subject.as_deref(), p.object.as_deref())?))
}

/// Serves the API until the process is stopped.
pub async fn serve(state: AppState, addr: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((addr, port)).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
