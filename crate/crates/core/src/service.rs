//! HTTP front end over a shared [`Engine`].

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::sync::OnceCell;

use crate::domain::{AnswerabilityCategory, WorkflowTrace};
use crate::engine::{Engine, EngineError};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
const MAX_IDEMPOTENCY_KEYS: usize = 10_000;

type Cached = (StatusCode, Value);

#[derive(Default)]
struct IdempotencyCache {
    entries: HashMap<String, ([u8; 32], Arc<OnceCell<Cached>>)>,
    order: VecDeque<String>,
}

impl IdempotencyCache {
    /// Cell for `key`, or `None` when the key was used with a different body.
    fn cell(&mut self, key: &str, digest: [u8; 32]) -> Option<Arc<OnceCell<Cached>>> {
        if let Some((d, cell)) = self.entries.get(key) {
            return (*d == digest).then(|| cell.clone());
        }
        if self.order.len() >= MAX_IDEMPOTENCY_KEYS {
            if let Some(old) = self.order.pop_front() {
                self.entries.remove(&old);
            }
        }
        let cell = Arc::new(OnceCell::new());
        self.entries.insert(key.to_string(), (digest, cell.clone()));
        self.order.push_back(key.to_string());
        Some(cell)
    }
}

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    idempotency: Arc<Mutex<IdempotencyCache>>,
    bearer_token: Option<Arc<str>>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>) -> Self {
        AppState {
            engine,
            idempotency: Arc::default(),
            bearer_token: None,
        }
    }

    /// Requires `Authorization: Bearer <token>` on every `/v1` route.
    pub fn with_bearer_token(mut self, token: Option<String>) -> Self {
        self.bearer_token = token.filter(|t| !t.is_empty()).map(Into::into);
        self
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuggestBody {
    pub trace: WorkflowTrace,
    pub num_suggestions: Option<usize>,
    #[serde(default)]
    pub verbose: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub retryable: bool,
}

fn error(status: StatusCode, code: &str, message: impl Into<String>, retryable: bool) -> Cached {
    let body = ErrorBody {
        code: code.into(),
        message: message.into(),
        retryable,
    };
    (status, json!({ "error": body }))
}

fn engine_error(e: &EngineError) -> Cached {
    match e {
        EngineError::UnknownAgent(_) => error(StatusCode::NOT_FOUND, "unknown_agent", e.to_string(), false),
        EngineError::Validation(_) | EngineError::Config(_) => {
            error(StatusCode::BAD_REQUEST, "invalid_request", e.to_string(), false)
        }
        EngineError::Provider { .. } | EngineError::ModelOutput(_) => {
            error(StatusCode::BAD_GATEWAY, "provider_error", e.to_string(), e.is_retryable())
        }
        EngineError::Generation(_) => error(StatusCode::UNPROCESSABLE_ENTITY, "generation_exhausted", e.to_string(), false),
        EngineError::Store(_) | EngineError::Setup(_) => {
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), false)
        }
    }
}

fn respond((status, body): Cached) -> Response {
    (status, Json(body)).into_response()
}

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/v1/suggest", post(suggest))
        .route("/v1/examples", get(examples))
        .route("/v1/traces:batch", post(batch))
        .route_layer(middleware::from_fn_with_state(state.clone(), auth));
    Router::new()
        .route("/healthz", get(healthz))
        .merge(v1)
        .with_state(state)
}

async fn auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.bearer_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token.as_ref());
        if !ok {
            return respond(error(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token", false));
        }
    }
    next.run(req).await
}

async fn run_suggest(engine: Arc<Engine>, body: SuggestBody) -> Cached {
    let joined = tokio::task::spawn_blocking(move || engine.process(&body.trace, body.num_suggestions, body.verbose)).await;
    match joined {
        Ok(Ok(outcome)) => (StatusCode::OK, serde_json::to_value(outcome).unwrap_or(Value::Null)),
        Ok(Err(e)) => engine_error(&e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), false),
    }
}

async fn suggest(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let parsed: SuggestBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return respond(error(StatusCode::BAD_REQUEST, "malformed_body", e.to_string(), false)),
    };
    let key = headers.get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string);
    let Some(key) = key else {
        return respond(run_suggest(state.engine.clone(), parsed).await);
    };
    let digest: [u8; 32] = Sha256::digest(&body).into();
    let cell = state
        .idempotency
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .cell(&key, digest);
    let Some(cell) = cell else {
        return respond(error(
            StatusCode::UNPROCESSABLE_ENTITY,
            "idempotency_key_reused",
            "idempotency key was already used with a different body",
            false,
        ));
    };
    let engine = state.engine.clone();
    // Retryable failures are not cached so that a retry can succeed.
    let result = cell
        .get_or_try_init(|| async move {
            let r = run_suggest(engine, parsed).await;
            let retryable = r.1.pointer("/error/retryable").and_then(Value::as_bool).unwrap_or(false);
            if retryable {
                Err(r)
            } else {
                Ok(r)
            }
        })
        .await;
    match result {
        Ok(c) => respond(c.clone()),
        Err(c) => respond(c),
    }
}

#[derive(Debug, Deserialize)]
pub struct ExamplesQuery {
    pub agent: String,
    #[serde(default)]
    pub page: usize,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
}

fn default_page_size() -> usize {
    100
}

async fn examples(State(state): State<AppState>, q: Result<Query<ExamplesQuery>, axum::extract::rejection::QueryRejection>) -> Response {
    let Ok(Query(q)) = q else {
        return respond(error(StatusCode::BAD_REQUEST, "invalid_request", "expected ?agent=<id>[&page=N&page_size=M]", false));
    };
    match state.engine.examples(&q.agent, q.page, q.page_size) {
        Ok(page) => (StatusCode::OK, Json(page)).into_response(),
        Err(e) => respond(engine_error(&e)),
    }
}

async fn healthz(State(state): State<AppState>) -> Response {
    let engine = state.engine.clone();
    let (store_ok, provider_ok) = tokio::task::spawn_blocking(move || {
        let store_ok = engine
            .agent_ids()
            .all(|id| engine.with_store(id, |s| s.dimension() > 0).unwrap_or(false));
        (store_ok, engine.provider().health().is_ok())
    })
    .await
    .unwrap_or((false, false));
    let status = if store_ok && provider_ok {
        StatusCode::OK
    } else {
        StatusCode::SERVICE_UNAVAILABLE
    };
    let word = |ok: bool| if ok { "ok" } else { "unavailable" };
    (status, Json(json!({"store": word(store_ok), "provider": word(provider_ok)}))).into_response()
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct BatchSummary {
    pub received: usize,
    pub ingested: usize,
    pub no_knowledge: usize,
    pub errors: Vec<BatchLineError>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchLineError {
    /// One-based line number in the request body.
    pub line: usize,
    pub message: String,
}

/// Ingests a JSON-lines body of traces, one line at a time.
async fn batch(State(state): State<AppState>, body: Bytes) -> Response {
    let Ok(text) = String::from_utf8(body.to_vec()) else {
        return respond(error(StatusCode::BAD_REQUEST, "malformed_body", "body is not UTF-8", false));
    };
    let engine = state.engine.clone();
    let summary = tokio::task::spawn_blocking(move || {
        let mut s = BatchSummary::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            s.received += 1;
            let outcome = serde_json::from_str::<WorkflowTrace>(line)
                .map_err(|e| e.to_string())
                .and_then(|t| engine.ingest(&t).map_err(|e| e.to_string()));
            match outcome {
                Ok(o) if o.verdict.category == AnswerabilityCategory::NoKnowledge => s.no_knowledge += 1,
                Ok(_) => s.ingested += 1,
                Err(message) => s.errors.push(BatchLineError { line: i + 1, message }),
            }
        }
        s
    })
    .await;
    match summary {
        Ok(s) => (StatusCode::OK, Json(s)).into_response(),
        Err(e) => respond(error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), false)),
    }
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
