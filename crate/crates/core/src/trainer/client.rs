use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::backend::BackendInfo;
use crate::model::{JobId, JobReport};
use crate::server::{
    AddBackendRequest, CancelRequest, CancelResponse, LifecycleResponse, PoolSummary, ProcessRequest, StatusResponse,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach rollout server {url}: {source}")]
    Connect { url: String, source: reqwest::Error },
    #[error("rollout server answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response from rollout server: {0}")]
    Decode(reqwest::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

/// HTTP client for one rollout server. /process blocks until the job
/// finishes, so no request timeout is set.
#[derive(Debug, Clone)]
pub struct RolloutClient {
    base: String,
    http: reqwest::Client,
}

impl RolloutClient {
    pub fn new(base: impl Into<String>) -> Self {
        let http = reqwest::Client::builder().pool_max_idle_per_host(1024).build().expect("http client construction");
        Self { base: base.into().trim_end_matches('/').to_string(), http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send<T: DeserializeOwned>(&self, req: reqwest::RequestBuilder) -> Result<T, ClientError> {
        let resp = req.send().await.map_err(|source| ClientError::Connect { url: self.base.clone(), source })?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(ClientError::Status { status: status.as_u16(), body });
        }
        resp.json().await.map_err(ClientError::Decode)
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<T, ClientError> {
        let mut req = self.http.post(format!("{}{path}", self.base));
        if let Some(body) = body {
            req = req.json(body);
        }
        self.send(req).await
    }

    pub async fn process(&self, req: &ProcessRequest) -> Result<JobReport, ClientError> {
        self.post("/process", Some(req)).await
    }

    pub async fn cancel(&self, job_id: &JobId) -> Result<CancelResponse, ClientError> {
        self.post("/cancel", Some(&CancelRequest { job_id: job_id.clone() })).await
    }

    pub async fn add_llm_server(&self, address: &str) -> Result<Vec<BackendInfo>, ClientError> {
        let summary: PoolSummary =
            self.post("/add_llm_server", Some(&AddBackendRequest { address: address.to_string() })).await?;
        Ok(summary.backends)
    }

    pub async fn clear_llm_server(&self) -> Result<Vec<BackendInfo>, ClientError> {
        let summary: PoolSummary = self.post::<(), _>("/clear_llm_server", None).await?;
        Ok(summary.backends)
    }

    pub async fn start(&self) -> Result<LifecycleResponse, ClientError> {
        self.post::<(), _>("/start", None).await
    }

    pub async fn stop(&self) -> Result<LifecycleResponse, ClientError> {
        self.post::<(), _>("/stop", None).await
    }

    pub async fn status(&self) -> Result<StatusResponse, ClientError> {
        self.send(self.http.get(format!("{}/status", self.base))).await
    }
}
