use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tokio::net::TcpListener;

use super::schema::{
    AddBackendRequest, CancelRequest, CancelResponse, ErrorBody, LifecycleResponse, PoolSummary, ProcessRequest,
};
use super::service::{RolloutService, ServiceError};
use crate::backend::PoolError;
use crate::pipeline::SubmitError;

type AppState = Arc<RolloutService>;

fn error(status: StatusCode, msg: impl ToString) -> Response {
    (status, Json(ErrorBody { error: msg.to_string() })).into_response()
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::BadRequest(_) | ServiceError::Submit(SubmitError::InvalidParams(_)) => {
                StatusCode::BAD_REQUEST
            }
            ServiceError::Submit(SubmitError::UnknownTask(_)) | ServiceError::UnknownJob(_) => StatusCode::NOT_FOUND,
            ServiceError::Submit(SubmitError::DuplicateJob(_))
            | ServiceError::AlreadyRunning
            | ServiceError::NotRunning => StatusCode::CONFLICT,
            ServiceError::Submit(SubmitError::ServerStopped) => StatusCode::SERVICE_UNAVAILABLE,
        };
        error(status, self)
    }
}

fn pool_error(e: PoolError) -> Response {
    match e {
        PoolError::MalformedAddress(_) => error(StatusCode::BAD_REQUEST, e),
        PoolError::DuplicateAddress(_) => error(StatusCode::CONFLICT, e),
    }
}

/// Parses a JSON body so that any malformed input is a 400.
#[allow(clippy::result_large_err)] // the error is the finished response
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

async fn process(State(svc): State<AppState>, body: Bytes) -> Response {
    let req: ProcessRequest = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    match svc.process(req).await {
        Ok(report) => Json(report).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn cancel(State(svc): State<AppState>, body: Bytes) -> Response {
    let req: CancelRequest = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    match svc.cancel(&req.job_id).await {
        Ok(_) => Json(CancelResponse { job_id: req.job_id, acknowledged: true }).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn add_llm_server(State(svc): State<AppState>, body: Bytes) -> Response {
    let req: AddBackendRequest = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    match svc.add_backend(&req.address) {
        Ok(backends) => Json(PoolSummary { backends }).into_response(),
        Err(e) => pool_error(e),
    }
}

async fn clear_llm_server(State(svc): State<AppState>) -> Response {
    Json(PoolSummary { backends: svc.clear_backends() }).into_response()
}

async fn start(State(svc): State<AppState>) -> Response {
    match svc.start().await {
        Ok(()) => Json(LifecycleResponse { running: true }).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn stop(State(svc): State<AppState>) -> Response {
    match svc.stop().await {
        Ok(_) => Json(LifecycleResponse { running: false }).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn status(State(svc): State<AppState>) -> Response {
    Json(svc.status().await).into_response()
}

pub fn app(svc: AppState) -> Router {
    Router::new()
        .route("/process", post(process))
        .route("/cancel", post(cancel))
        .route("/add_llm_server", post(add_llm_server))
        .route("/clear_llm_server", post(clear_llm_server))
        .route("/start", post(start))
        .route("/stop", post(stop))
        .route("/status", get(status))
        .with_state(svc)
}

/// Serves until `shutdown` resolves, then drains the service.
pub async fn serve(
    svc: AppState,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let drain = svc.clone();
    let graceful = async move {
        shutdown.await;
        // Release blocked /process callers before the listener closes.
        let _ = drain.stop().await;
    };
    axum::serve(listener, app(svc.clone())).with_graceful_shutdown(graceful).await?;
    let _ = svc.stop().await;
    Ok(())
}
