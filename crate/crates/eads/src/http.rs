//! HTTP/JSON transport for the server.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/ledgers/{id}/entries` | append (bearer token) |
//! | GET | `/ledgers/{id}/entries/{index}` | entry + inclusion proof |
//! | GET | `/ledgers/{id}/keys/{hex}` | map value + map proof |
//! | GET | `/ledgers/{id}/checkpoint` | latest published checkpoint |
//! | GET | `/ledgers/{id}/consistency/{from}/{to}` | proof between two published sizes |
//! | GET | `/journal/{id}` | journal envelopes for the ledger |
//! | GET | `/journal/{id}/latest` | latest envelope or `null` |
//! | POST | `/admin/adversary` | set adversary mode (bearer token, admin only) |

use std::future::Future;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::client::SESSION_HEADER;
use crate::server::{AdversaryMode, AppendRequest, Server, ServerError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdminRequest {
    pub ledger: String,
    #[serde(flatten)]
    pub mode: AdversaryMode,
}

#[derive(Clone)]
pub struct AppState {
    server: Arc<Mutex<Server>>,
    token: Arc<str>,
    admin_enabled: bool,
}

impl AppState {
    pub fn new(server: Server, token: &str, admin_enabled: bool) -> Self {
        AppState {
            server: Arc::new(Mutex::new(server)),
            token: token.into(),
            admin_enabled,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Server> {
        self.server.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub enum ApiError {
    Unauthorized,
    AdminDisabled,
    BadRequest(String),
    Server(ServerError),
}

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        ApiError::Server(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::Unauthorized => (
                StatusCode::UNAUTHORIZED,
                "missing or wrong bearer token".to_owned(),
            ),
            ApiError::AdminDisabled => (
                StatusCode::FORBIDDEN,
                "admin endpoint is disabled".to_owned(),
            ),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Server(e) => {
                let status = match &e {
                    ServerError::UnknownLedger(_) => StatusCode::NOT_FOUND,
                    ServerError::Range { .. } => StatusCode::RANGE_NOT_SATISFIABLE,
                    ServerError::Conflict(_) => StatusCode::CONFLICT,
                    ServerError::BadInput(_) => StatusCode::BAD_REQUEST,
                    _ => StatusCode::INTERNAL_SERVER_ERROR,
                };
                (status, e.to_string())
            }
        };
        (status, Json(serde_json::json!({ "error": msg }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn authorize(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let expected = format!("Bearer {}", state.token);
    match headers.get("authorization").and_then(|v| v.to_str().ok()) {
        Some(v) if v == expected => Ok(()),
        _ => Err(ApiError::Unauthorized),
    }
}

fn session(headers: &HeaderMap) -> Option<&str> {
    headers.get(SESSION_HEADER).and_then(|v| v.to_str().ok())
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(e.to_string()))
}

async fn append(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<crate::server::AppendResponse> {
    authorize(&state, &headers)?;
    let req: AppendRequest = parse_json(&body)?;
    Ok(Json(state.lock().append(&id, session(&headers), &req)?))
}

async fn query(
    State(state): State<AppState>,
    Path((id, index)): Path<(String, u64)>,
    headers: HeaderMap,
) -> ApiResult<crate::server::QueryResponse> {
    Ok(Json(state.lock().query(&id, session(&headers), index)?))
}

async fn query_key(
    State(state): State<AppState>,
    Path((id, key)): Path<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<crate::server::MapQueryResponse> {
    let key = eads_core::hash::decode_lower_hex(&key)
        .map_err(|_| ApiError::BadRequest("key must be lowercase hex".into()))?;
    Ok(Json(state.lock().query_key(
        &id,
        session(&headers),
        &key,
    )?))
}

async fn checkpoint(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<eads_core::SignedCheckpoint> {
    Ok(Json(state.lock().checkpoint(&id, session(&headers))?))
}

async fn consistency(
    State(state): State<AppState>,
    Path((id, old_size, new_size)): Path<(String, u64, u64)>,
    headers: HeaderMap,
) -> ApiResult<eads_core::ConsistencyProof> {
    Ok(Json(state.lock().consistency(
        &id,
        session(&headers),
        old_size,
        new_size,
    )?))
}

async fn journal(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Vec<crate::storage::Envelope>> {
    Ok(Json(state.lock().journal(&id, session(&headers))?))
}

async fn journal_latest(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Option<crate::storage::Envelope>> {
    Ok(Json(state.lock().journal_latest(&id, session(&headers))?))
}

async fn admin(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<serde_json::Value> {
    authorize(&state, &headers)?;
    if !state.admin_enabled {
        return Err(ApiError::AdminDisabled);
    }
    let req: AdminRequest = parse_json(&body)?;
    state.lock().set_adversary(&req.ledger, req.mode.clone())?;
    Ok(Json(
        serde_json::json!({ "ledger": req.ledger, "applied": req.mode }),
    ))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/ledgers/{id}/entries", post(append))
        .route("/ledgers/{id}/entries/{index}", get(query))
        .route("/ledgers/{id}/keys/{key}", get(query_key))
        .route("/ledgers/{id}/checkpoint", get(checkpoint))
        .route("/ledgers/{id}/consistency/{from}/{to}", get(consistency))
        .route("/journal/{id}", get(journal))
        .route("/journal/{id}/latest", get(journal_latest))
        .route("/admin/adversary", post(admin))
        .with_state(state)
}

pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on its own runtime thread; stops when dropped.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl BackgroundServer {
    pub fn start(addr: SocketAddr, state: AppState) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(serve(listener, state, async {
                let _ = rx.await;
            }))
        });
        Ok(BackgroundServer {
            addr,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
