//! HTTP binding.
//!
//! | method | path                         | success | errors        |
//! |--------|------------------------------|---------|---------------|
//! | POST   | `/v1/sessions`               | 201     | 400, 503      |
//! | POST   | `/v1/sessions/{id}/frames`   | 200     | 400, 404, 429 |
//! | GET    | `/v1/sessions/{id}/results`  | 200     | 404           |
//! | DELETE | `/v1/sessions/{id}`          | 200     | 404           |

use std::future::Future;
use std::io;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;

use crate::wire::{Created, ErrorBody, FrameBatch, WireBatch};
use crate::{Service, ServiceError, SessionOverrides};

/// Large enough for a full 120-frame 320x240 batch after base64.
pub const BODY_LIMIT: usize = 64 << 20;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::MalformedBatch { .. } | ServiceError::InvalidOverrides(_) => StatusCode::BAD_REQUEST,
            ServiceError::TooManySessions(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::QueueFull => StatusCode::TOO_MANY_REQUESTS,
        };
        let field = match &self {
            ServiceError::MalformedBatch { field, .. } => Some((*field).to_owned()),
            _ => None,
        };
        let body = ErrorBody {
            error: self.to_string(),
            field,
        };
        (status, Json(body)).into_response()
    }
}

fn bad_json(e: serde_json::Error) -> Response {
    let body = ErrorBody {
        error: format!("invalid JSON body: {e}"),
        field: None,
    };
    (StatusCode::BAD_REQUEST, Json(body)).into_response()
}

async fn create(State(svc): State<Service>, body: Bytes) -> Response {
    let overrides = if body.iter().all(u8::is_ascii_whitespace) {
        SessionOverrides::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(o) => o,
            Err(e) => return bad_json(e),
        }
    };
    match svc.create_session(overrides) {
        Ok(session_id) => (StatusCode::CREATED, Json(Created { session_id })).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn submit(State(svc): State<Service>, Path(id): Path<String>, body: Bytes) -> Response {
    let wire: WireBatch = match serde_json::from_slice(&body) {
        Ok(w) => w,
        Err(e) => return bad_json(e),
    };
    if wire.session_id.as_deref().is_some_and(|s| s != id) {
        return ServiceError::MalformedBatch {
            field: "session_id",
            reason: "does not match the path".into(),
        }
        .into_response();
    }
    let result = tokio::task::spawn_blocking(move || {
        let batch = FrameBatch::from_wire(wire)?;
        svc.submit_batch(&id, batch)
    })
    .await
    .expect("submit task panicked");
    match result {
        Ok(ack) => Json(ack).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn results(State(svc): State<Service>, Path(id): Path<String>) -> Response {
    match svc.poll(&id) {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn close(State(svc): State<Service>, Path(id): Path<String>) -> Response {
    match svc.close_session(&id) {
        Ok(s) => Json(s).into_response(),
        Err(e) => e.into_response(),
    }
}

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}/frames", post(submit))
        .route("/v1/sessions/{id}/results", get(results))
        .route("/v1/sessions/{id}", axum::routing::delete(close))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(service)
}

/// Serves until `shutdown` resolves, then drains open connections.
pub async fn serve<F>(listener: TcpListener, service: Service, shutdown: F) -> io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await
}
