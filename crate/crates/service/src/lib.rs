//! HTTP service: question translation, program execution and the combined
//! question-to-answer endpoint, with optional delegation to a model adapter.
//!
//! All state is built once at startup and shared read-only across requests.

pub mod adapter;
pub mod api;

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tower_http::cors::CorsLayer;
use tower_http::trace::TraceLayer;

pub use api::{ApiError, Service, ServiceConfig, MAX_SERIES_POINTS};
use qapt_core::wire::{ExecuteRequest, TranslateRequest};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body)).into_response()
    }
}

type Shared = Arc<Service>;

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes)
        .map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

fn reply<T: Serialize>(result: Result<T, ApiError>) -> Response {
    match result {
        Ok(value) => Json(value).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn translate(State(svc): State<Shared>, bytes: Bytes) -> Response {
    let result = match body::<TranslateRequest>(&bytes) {
        Ok(req) => svc.translate(&req).await,
        Err(e) => Err(e),
    };
    reply(result)
}

async fn execute(State(svc): State<Shared>, bytes: Bytes) -> Response {
    let result = match body::<ExecuteRequest>(&bytes) {
        Ok(req) => svc.execute_blocking(req).await,
        Err(e) => Err(e),
    };
    reply(result)
}

async fn qa(State(svc): State<Shared>, bytes: Bytes) -> Response {
    let result = match body::<TranslateRequest>(&bytes) {
        Ok(req) => svc.qa(&req).await,
        Err(e) => Err(e),
    };
    reply(result)
}

async fn forms(State(svc): State<Shared>) -> Response {
    Json(svc.forms()).into_response()
}

async fn health(State(svc): State<Shared>) -> Response {
    Json(svc.health()).into_response()
}

/// Builds the API router. `dev` adds permissive cross-origin headers so a
/// console served from another origin can call the API.
pub fn router(service: Arc<Service>, dev: bool) -> Router {
    let app = Router::new()
        .route("/api/translate", post(translate))
        .route("/api/execute", post(execute))
        .route("/api/qa", post(qa))
        .route("/api/forms", get(forms))
        .route("/healthz", get(health))
        .with_state(service)
        .layer(TraceLayer::new_for_http());
    if dev {
        app.layer(CorsLayer::permissive())
    } else {
        app
    }
}

/// Serves `app` on `listener` until `shutdown` resolves, then drains
/// in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}
