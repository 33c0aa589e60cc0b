use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::Notify;
use tokio_util::sync::CancellationToken;
use tracing::{debug, warn};

use super::pool::{BackendInfo, BackendPool, PoolError, SelectionPolicy};
use super::wire::{generate_url, FinishReason, GenerateRequest, GenerateResponse};
use crate::model::{SamplingParams, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryConfig {
    #[serde(rename = "base_ms", with = "crate::util::duration_ms")]
    pub base: Duration,
    #[serde(rename = "cap_ms", with = "crate::util::duration_ms")]
    pub cap: Duration,
    /// Total time one generate call may spend waiting for a usable backend.
    #[serde(rename = "budget_ms", with = "crate::util::duration_ms")]
    pub budget: Duration,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self { base: Duration::from_millis(100), cap: Duration::from_secs(2), budget: Duration::from_secs(30) }
    }
}

impl RetryConfig {
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base.saturating_mul(1u32 << attempt.min(20)).min(self.cap)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RouterError {
    #[error("no inference backend available after {0:?}")]
    NoBackendAvailable(Duration),
    #[error("backend {address} rejected the request ({status}): {body}")]
    Rejected { address: String, status: u16, body: String },
    #[error("backend {address} returned a malformed response: {reason}")]
    BadResponse { address: String, reason: String },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("generation cancelled")]
    Cancelled,
}

/// One completed generation, with the backend that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub output_ids: Vec<TokenId>,
    pub logprobs: Vec<f64>,
    pub finish_reason: FinishReason,
    pub backend: String,
}

/// Routes generation calls to the backend pool and performs the HTTP I/O
/// outside the pool lock.
#[derive(Debug, Clone)]
pub struct LlmRouter {
    inner: Arc<RouterInner>,
}

#[derive(Debug)]
struct RouterInner {
    pool: Mutex<BackendPool>,
    added: Notify,
    client: reqwest::Client,
    retry: RetryConfig,
}

enum Attempt {
    Done(Generation),
    Transient(String),
}

impl LlmRouter {
    pub fn new(policy: SelectionPolicy, retry: RetryConfig) -> Self {
        let client = reqwest::Client::builder().pool_max_idle_per_host(256).build().expect("http client construction");
        Self {
            inner: Arc::new(RouterInner {
                pool: Mutex::new(BackendPool::new(policy)),
                added: Notify::new(),
                client,
                retry,
            }),
        }
    }

    fn pool(&self) -> MutexGuard<'_, BackendPool> {
        self.inner.pool.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn retry(&self) -> RetryConfig {
        self.inner.retry
    }

    pub fn policy(&self) -> SelectionPolicy {
        self.pool().policy()
    }

    pub fn add_backend(&self, address: &str) -> Result<Vec<BackendInfo>, PoolError> {
        let snapshot = {
            let mut pool = self.pool();
            pool.add(address)?;
            pool.snapshot()
        };
        self.inner.added.notify_waiters();
        Ok(snapshot)
    }

    pub fn clear_backends(&self) -> Vec<BackendInfo> {
        let mut pool = self.pool();
        pool.clear();
        pool.snapshot()
    }

    pub fn backends(&self) -> Vec<BackendInfo> {
        self.pool().snapshot()
    }

    pub fn assign(&self, job_id: &str) -> Option<String> {
        self.pool().assign(job_id)
    }

    pub fn assignment(&self, job_id: &str) -> Option<String> {
        self.pool().assignment(job_id).map(str::to_string)
    }

    /// Called when a job goes terminal.
    pub fn release(&self, job_id: &str) {
        self.pool().release(job_id);
    }

    /// Generates through the job's sticky backend. Empty pools and
    /// unreachable backends are retried with exponential backoff until the
    /// retry budget runs out.
    pub async fn generate(
        &self,
        job_id: &str,
        prompt_ids: &[TokenId],
        params: &SamplingParams,
        cancel: &CancellationToken,
    ) -> Result<Generation, RouterError> {
        if prompt_ids.is_empty() {
            return Err(RouterError::EmptyPrompt);
        }
        let retry = self.inner.retry;
        let started = Instant::now();
        let deadline = started + retry.budget;
        let body = GenerateRequest { prompt_ids: prompt_ids.to_vec(), sampling_params: params.clone() };
        let mut attempt = 0u32;
        loop {
            if cancel.is_cancelled() {
                return Err(RouterError::Cancelled);
            }
            // Register interest before looking so an add between the
            // check and the wait is not missed.
            let added = self.inner.added.notified();
            tokio::pin!(added);
            added.as_mut().enable();

            let picked = self.assign(job_id);
            let wait_for_add = match &picked {
                Some(address) => {
                    let outcome = tokio::select! {
                        _ = cancel.cancelled() => return Err(RouterError::Cancelled),
                        r = self.call(address, &body) => r?,
                    };
                    match outcome {
                        Attempt::Done(g) => return Ok(g),
                        Attempt::Transient(reason) => {
                            warn!(job_id, %address, %reason, "backend unreachable; re-resolving");
                            self.pool().invalidate(job_id, address);
                            false
                        }
                    }
                }
                None => true,
            };

            let now = Instant::now();
            if now >= deadline {
                return Err(RouterError::NoBackendAvailable(now - started));
            }
            let delay = retry.delay(attempt).min(deadline - now);
            attempt += 1;
            debug!(job_id, ?delay, attempt, "waiting for a backend");
            tokio::select! {
                _ = cancel.cancelled() => return Err(RouterError::Cancelled),
                _ = tokio::time::sleep(delay) => {}
                _ = &mut added, if wait_for_add => {}
            }
        }
    }

    async fn call(&self, address: &str, body: &GenerateRequest) -> Result<Attempt, RouterError> {
        let resp = match self.inner.client.post(generate_url(address)).json(body).send().await {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Transient(e.to_string())),
        };
        let status = resp.status();
        if status.is_server_error() {
            return Ok(Attempt::Transient(format!("status {status}")));
        }
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(RouterError::Rejected { address: address.to_string(), status: status.as_u16(), body });
        }
        let parsed: GenerateResponse = match resp.json().await {
            Ok(p) => p,
            Err(e) if e.is_decode() => {
                return Err(RouterError::BadResponse { address: address.to_string(), reason: e.to_string() })
            }
            Err(e) => return Ok(Attempt::Transient(e.to_string())),
        };
        if parsed.logprobs.len() != parsed.output_ids.len() {
            return Err(RouterError::BadResponse {
                address: address.to_string(),
                reason: format!("{} ids but {} logprobs", parsed.output_ids.len(), parsed.logprobs.len()),
            });
        }
        Ok(Attempt::Done(Generation {
            output_ids: parsed.output_ids,
            logprobs: parsed.logprobs,
            finish_reason: parsed.finish_reason,
            backend: address.to_string(),
        }))
    }
}
