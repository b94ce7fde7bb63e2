//! Read-only HTTP API over a graph store.
//!
//! * `GET /graphs` lists stored graphs.
//! * `GET /graph/{id}` returns the graph JSON, without vectors unless
//!   `?vectors=true`.
//! * `POST /retrieve` `{graph_id, prompt, budget?, strategy?, edge_bias?}`
//!   returns a retrieval result.
//! * `POST /ask` `{graph_id, prompt, budget?, strategy?, options?}` returns
//!   `{answer, retrieval}`.
//!
//! Failures are JSON objects `{code, message, stage?}`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gem_core::engine::Answer;
use gem_core::graph::GemGraph;
use gem_core::retrieval::{RetrievalConfig, RetrievalResult, Strategy};
use gem_core::store::{GraphFile, GraphStore, GraphSummary, StoreError};
use gem_core::{Engine, Error, Stage};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(skip)]
    status: u16,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
            stage: None,
            status: status.as_u16(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "graph_not_found", format!("no graph with id {id:?}"))
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let stage = Some(e.stage());
        let mut out = if e.is_provider_failure() {
            Self::new(StatusCode::BAD_GATEWAY, "provider_error", e.to_string())
        } else {
            match &e {
                Error::Store(StoreError::NotFound(id)) => Self::not_found(id),
                Error::Config(_) | Error::Retrieval(_) => {
                    Self::new(StatusCode::BAD_REQUEST, "invalid_request", e.to_string())
                }
                _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", e.to_string()),
            }
        };
        out.stage = stage;
        out
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Error::Store(e).into()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Shared service state: the store, the engine that embeds prompts and
/// answers, and a cache of parsed graphs.
#[derive(Clone)]
pub struct AppState {
    store: GraphStore,
    engine: Engine,
    cache: Arc<Mutex<HashMap<String, Arc<GemGraph>>>>,
}

impl AppState {
    pub fn new(store: GraphStore, engine: Engine) -> Self {
        Self {
            store,
            engine,
            cache: Arc::default(),
        }
    }

    fn graph(&self, id: &str) -> Result<Arc<GemGraph>, ApiError> {
        if let Some(g) = self.cache.lock().expect("cache lock").get(id) {
            return Ok(g.clone());
        }
        let graph = match self.store.load(id) {
            Ok(g) => Arc::new(g),
            Err(StoreError::NotFound(_)) => return Err(ApiError::not_found(id)),
            Err(e) => return Err(e.into()),
        };
        self.engine.check_compatible(&graph)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(id.to_string(), graph.clone());
        Ok(graph)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/graphs", get(list_graphs))
        .route("/graph/{id}", get(get_graph))
        .route("/retrieve", post(retrieve))
        .route("/ask", post(ask))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .layer(CorsLayer::permissive())
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GraphList {
    pub graphs: Vec<GraphSummary>,
}

async fn list_graphs(State(state): State<AppState>) -> ApiResult<GraphList> {
    let store = state.store.clone();
    let graphs = tokio::task::spawn_blocking(move || store.list())
        .await
        .map_err(join_error)??;
    Ok(Json(GraphList { graphs }))
}

#[derive(Debug, Deserialize)]
struct GraphQuery {
    #[serde(default)]
    vectors: bool,
}

async fn get_graph(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<GraphQuery>,
) -> ApiResult<GraphFile> {
    let graph = tokio::task::spawn_blocking(move || state.graph(&id))
        .await
        .map_err(join_error)??;
    Ok(Json(GraphFile::from_graph(&graph, q.vectors)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrieveRequest {
    pub graph_id: String,
    pub prompt: String,
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub edge_bias: Option<f64>,
    /// Multiple-choice options for `/ask`.
    #[serde(default)]
    pub options: Option<Vec<String>>,
}

impl RetrieveRequest {
    fn config(&self, defaults: RetrievalConfig) -> Result<RetrievalConfig, ApiError> {
        if self.prompt.trim().is_empty() {
            return Err(ApiError::bad_request("prompt must not be empty"));
        }
        let config = RetrievalConfig {
            budget: self.budget.unwrap_or(defaults.budget),
            strategy: self.strategy.unwrap_or(defaults.strategy),
            edge_bias: self.edge_bias.unwrap_or(defaults.edge_bias),
        };
        if config.budget < 1 {
            return Err(ApiError::bad_request("budget must be at least 1"));
        }
        Ok(config)
    }
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", e.to_string())
}

async fn retrieve(
    State(state): State<AppState>,
    body: Result<Json<RetrieveRequest>, JsonRejection>,
) -> ApiResult<RetrievalResult> {
    let Json(req) = body?;
    let config = req.config(state.engine.config().retrieval())?;
    let result = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let graph = state.graph(&req.graph_id)?;
        Ok(state.engine.retrieve_with(&graph, &req.prompt, &config)?)
    })
    .await
    .map_err(join_error)??;
    Ok(Json(result))
}

async fn ask(
    State(state): State<AppState>,
    body: Result<Json<RetrieveRequest>, JsonRejection>,
) -> ApiResult<Answer> {
    let Json(req) = body?;
    let config = req.config(state.engine.config().retrieval())?;
    let answer = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let graph = state.graph(&req.graph_id)?;
        Ok(state
            .engine
            .ask(&graph, &req.prompt, req.options.as_deref(), &config)?)
    })
    .await
    .map_err(join_error)??;
    Ok(Json(answer))
}

/// Bind and serve until Ctrl-C.
pub async fn serve(state: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
