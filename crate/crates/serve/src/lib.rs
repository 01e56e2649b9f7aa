//! JSON HTTP service: classify and explain commits, queue the resulting
//! alerts, and record analyst verdicts in an append-only log.
//!
//! | method | path          | body / query                  |
//! |--------|---------------|-------------------------------|
//! | GET    | `/health`     |                               |
//! | POST   | `/v1/predict` | `{message, diff, repo?}`      |
//! | GET    | `/v1/queue`   | `?status=pending|judged|all`  |
//! | POST   | `/v1/verdict` | [`Verdict`]                   |
//! | GET    | `/v1/stats`   |                               |

pub mod predictor;
pub mod store;

use std::future::Future;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tower_http::cors::CorsLayer;

pub use predictor::{Prediction, Predictor, SERVE_VARIANT, THRESHOLD};
pub use store::{AlertItem, AlertStore, QueueItem, QueueStatus, Stats, StoreError, Verdict, VerdictKind, VerdictRecord};

#[derive(Clone)]
pub struct AppState {
    predictor: Option<Arc<Predictor>>,
    store: Arc<Mutex<AlertStore>>,
}

impl AppState {
    /// `predictor: None` keeps the queue and verdict endpoints up while
    /// `/v1/predict` answers 503.
    pub fn new(predictor: Option<Predictor>, store: AlertStore) -> Self {
        AppState {
            predictor: predictor.map(Arc::new),
            store: Arc::new(Mutex::new(store)),
        }
    }

    fn store(&self) -> std::sync::MutexGuard<'_, AlertStore> {
        // A panic while holding the lock cannot leave a half-applied event:
        // state only changes after the append succeeds.
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UnknownAlert(_) => StatusCode::NOT_FOUND,
            StoreError::AlreadyJudged(_) => StatusCode::CONFLICT,
            StoreError::Invalid(_) => StatusCode::BAD_REQUEST,
            StoreError::Corrupt { .. } | StoreError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

/// Parses the body ourselves so every malformed request is a plain 400.
fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub message: String,
    pub diff: String,
    #[serde(default)]
    pub repo: Option<String>,
}

#[derive(Debug, Deserialize)]
struct QueueParams {
    status: Option<String>,
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "model_loaded": state.predictor.is_some(),
    }))
}

async fn predict(State(state): State<AppState>, body: Bytes) -> Result<Json<AlertItem>, ApiError> {
    let req: PredictRequest = parse_body(&body)?;
    let predictor = state
        .predictor
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded"))?;
    let (message, diff) = (req.message.clone(), req.diff.clone());
    let prediction = tokio::task::spawn_blocking(move || predictor.predict(&message, &diff))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| match e {
            vpsn_core::Error::DiffParse { .. } => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        })?;
    let alert = state.store().add_alert(req.repo, &req.message, &req.diff, prediction)?;
    tracing::info!(alert_id = %alert.alert_id, probability = alert.probability, "alert queued");
    Ok(Json(alert))
}

async fn queue(State(state): State<AppState>, Query(params): Query<QueueParams>) -> Result<Json<Vec<QueueItem>>, ApiError> {
    let status = match params.status.as_deref() {
        None => QueueStatus::Pending,
        Some(s) => s.parse().map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, e))?,
    };
    Ok(Json(state.store().queue(status)))
}

async fn verdict(State(state): State<AppState>, body: Bytes) -> Result<Json<VerdictRecord>, ApiError> {
    let v: Verdict = parse_body(&body)?;
    let record = state.store().record_verdict(v)?;
    tracing::info!(alert_id = %record.verdict.alert_id, "verdict recorded");
    Ok(Json(record))
}

async fn stats(State(state): State<AppState>) -> Json<Stats> {
    Json(state.store().stats())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/predict", post(predict))
        .route("/v1/queue", get(queue))
        .route("/v1/verdict", post(verdict))
        .route("/v1/stats", get(stats))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until `shutdown` resolves. Every append is synced as it happens,
/// so nothing is pending when this returns.
pub async fn serve(listener: TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
