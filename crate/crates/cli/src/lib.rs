//! HTTP decision endpoint over a loaded parameter file.
//!
//! - `POST /decide` takes `{stratum, x1, x2?, cutoff?}` and returns a
//!   decision report.
//! - `GET /model` returns the per-stratum parameter summary.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use retest_core::decision::{decide, DecisionConfig, DecisionRequest, FittedModel, FittedSummary};
use retest_core::Error;
use serde::Serialize;

pub struct AppState {
    pub fitted: FittedModel,
    pub summary: Vec<FittedSummary>,
    pub use_draws: bool,
    pub config: DecisionConfig,
}

impl AppState {
    pub fn new(fitted: FittedModel, use_draws: bool, config: DecisionConfig) -> retest_core::Result<Self> {
        Ok(Self {
            summary: fitted.summary()?,
            fitted,
            use_draws,
            config,
        })
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    detail: String,
}

fn error(status: StatusCode, error: &str, detail: impl ToString) -> Response {
    (
        status,
        Json(ErrorBody {
            error: error.to_string(),
            detail: detail.to_string(),
        }),
    )
        .into_response()
}

pub fn app(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/decide", post(decide_handler))
        .route("/model", get(model_handler))
        .with_state(state)
}

async fn decide_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let request: DecisionRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid request body", e),
    };
    let outcome = tokio::task::spawn_blocking(move || decide(&state.fitted, &request, state.use_draws, &state.config)).await;
    match outcome {
        Ok(Ok(report)) => Json(report).into_response(),
        Ok(Err(e @ Error::UnknownStratum(_))) => error(StatusCode::UNPROCESSABLE_ENTITY, "unknown stratum", e),
        Ok(Err(e @ Error::Domain(_))) => error(StatusCode::BAD_REQUEST, "invalid request", e),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, "evaluation failed", e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "evaluation failed", e),
    }
}

async fn model_handler(State(state): State<Arc<AppState>>) -> Response {
    Json(&state.summary).into_response()
}

pub async fn serve(state: AppState, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app(Arc::new(state))).await
}
