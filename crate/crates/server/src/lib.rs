//! HTTP/JSON front end for `vipguard-core`.
//!
//! Every endpoint takes and returns JSON; failures answer with an
//! [`ApiError`] body `{"kind": ..., "message": ...}` and a 4xx/5xx status.
//! Training, evaluation, sweeps and reports run on the blocking pool and the
//! request completes when the work does.
//!
//! Request and response types live in [`vipguard_core::api`]:
//!
//! | method | path               | body                 | response              |
//! |--------|--------------------|----------------------|-----------------------|
//! | GET    | `/v1/health`       |                      | `Health`              |
//! | POST   | `/v1/config`       | `ConfigSource`       | `ResolvedConfig`      |
//! | POST   | `/v1/threat`       | `ThreatRequest`      | `ThreatReport`        |
//! | POST   | `/v1/total-threat` | `TotalThreatRequest` | `TotalThreatResponse` |
//! | POST   | `/v1/rewards`      | `RewardsRequest`     | `RewardsResponse`     |
//! | POST   | `/v1/train`        | `TrainRequest`       | `TrainResponse`       |
//! | POST   | `/v1/eval`         | `EvalRequest`        | `EvalResponse`        |
//! | POST   | `/v1/sweep`        | `SweepRequest`       | `SweepResponse`       |
//! | POST   | `/v1/report`       | `ReportRequest`      | `ReportResponse`      |

use std::net::SocketAddr;

use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use vipguard_core::api::{self, ApiError, Health};

/// HTTP status for an error class.
pub fn status_for(kind: &str) -> StatusCode {
    match kind {
        "not_found" => StatusCode::NOT_FOUND,
        "env" | "learner" | "nn" | "non_finite_loss" | "internal" => StatusCode::INTERNAL_SERVER_ERROR,
        "io" => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::BAD_REQUEST,
    }
}

struct Failure(ApiError);

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (status_for(&self.0.kind), Json(self.0)).into_response()
    }
}

type Reply<T> = Result<Json<T>, Failure>;

/// Runs `op` on the blocking pool after decoding the body.
async fn call<Req, Resp>(body: Result<Json<Req>, JsonRejection>, op: fn(&Req) -> Result<Resp, ApiError>) -> Reply<Resp>
where
    Req: Send + 'static,
    Resp: Send + 'static,
{
    let Json(req) = body.map_err(|e| Failure(ApiError::new("invalid_request", e.body_text())))?;
    match tokio::task::spawn_blocking(move || op(&req)).await {
        Ok(result) => result.map(Json).map_err(Failure),
        Err(e) => Err(Failure(ApiError::new("internal", format!("worker failed: {e}")))),
    }
}

async fn health() -> Json<Health> {
    Json(Health::ok())
}

async fn not_found() -> Failure {
    Failure(ApiError::new("not_found", "no such endpoint"))
}

pub fn router() -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/config", post(|b| call(b, api::resolve_config)))
        .route("/v1/threat", post(|b| call(b, api::threat)))
        .route("/v1/total-threat", post(|b| call(b, api::total_threat_of)))
        .route("/v1/rewards", post(|b| call(b, api::rewards)))
        .route("/v1/train", post(|b| call(b, api::train)))
        .route("/v1/eval", post(|b| call(b, api::eval)))
        .route("/v1/sweep", post(|b| call(b, api::sweep)))
        .route("/v1/report", post(|b| call(b, api::report)))
        .fallback(not_found)
}

/// Binds `addr` (port 0 picks a free port) and returns the listener with its
/// actual address.
pub async fn bind(addr: SocketAddr) -> std::io::Result<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}

/// Serves the router on `listener` until the task is dropped.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "serving");
    axum::serve(listener, router()).await
}
