use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;

use super::policy::MockPolicy;
use crate::backend::GenerateRequest;

#[derive(Debug)]
pub struct MockState {
    policy: MockPolicy,
    requests: AtomicU64,
}

impl MockState {
    pub fn new(policy: MockPolicy) -> Arc<Self> {
        Arc::new(Self { policy, requests: AtomicU64::new(0) })
    }

    pub fn policy(&self) -> &MockPolicy {
        &self.policy
    }

    /// Generate requests answered successfully so far.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }
}

fn bad_request(msg: impl std::fmt::Display) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "error": msg.to_string() }))).into_response()
}

async fn generate(State(state): State<Arc<MockState>>, body: Bytes) -> Response {
    let req: GenerateRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(e),
    };
    if req.prompt_ids.is_empty() {
        return bad_request("prompt_ids must be nonempty");
    }
    if let Err(e) = req.sampling_params.validate() {
        return bad_request(e);
    }
    let delay = state.policy.latency.sample(&mut rand::rng());
    if !delay.is_zero() {
        tokio::time::sleep(delay).await;
    }
    let resp = state.policy.respond(&req.prompt_ids, &req.sampling_params);
    state.requests.fetch_add(1, Ordering::Relaxed);
    Json(resp).into_response()
}

pub fn app(state: Arc<MockState>) -> Router {
    Router::new().route("/v1/generate", post(generate)).with_state(state)
}

/// A mock backend serving on a local port until shut down or dropped.
#[derive(Debug)]
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<MockState>,
    shutdown: CancellationToken,
    task: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub async fn spawn(policy: MockPolicy, addr: SocketAddr) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        Self::serve(policy, listener)
    }

    pub async fn spawn_local(policy: MockPolicy) -> std::io::Result<Self> {
        Self::spawn(policy, SocketAddr::from(([127, 0, 0, 1], 0))).await
    }

    pub fn serve(policy: MockPolicy, listener: TcpListener) -> std::io::Result<Self> {
        let addr = listener.local_addr()?;
        let state = MockState::new(policy);
        let shutdown = CancellationToken::new();
        let stop = shutdown.clone();
        let router = app(state.clone());
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, router).with_graceful_shutdown(async move { stop.cancelled().await }).await;
        });
        Ok(Self { addr, state, shutdown, task: Some(task) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base address in the form backends are registered with.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn state(&self) -> &Arc<MockState> {
        &self.state
    }

    pub fn requests(&self) -> u64 {
        self.state.requests()
    }

    /// Stops accepting connections and aborts in-flight requests.
    pub async fn shutdown(mut self) {
        self.shutdown.cancel();
        if let Some(task) = self.task.take() {
            task.abort();
            let _ = task.await;
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.cancel();
        if let Some(task) = self.task.take() {
            task.abort();
        }
    }
}
