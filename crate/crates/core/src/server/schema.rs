//! JSON bodies of the HTTP interface.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::BackendInfo;
use crate::model::{JobId, JobReport, SamplingParams};
use crate::pipeline::QueueDepths;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub task_name: String,
    #[serde(default)]
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessRequest {
    pub instance: InstanceSpec,
    #[serde(default)]
    pub sampling_params: SamplingParams,
}

impl ProcessRequest {
    pub fn new(task_name: impl Into<String>, payload: Value) -> Self {
        Self {
            instance: InstanceSpec { task_name: task_name.into(), payload, job_id: None, timeout_seconds: None },
            sampling_params: SamplingParams::default(),
        }
    }

    pub fn with_job_id(mut self, id: impl Into<String>) -> Self {
        self.instance.job_id = Some(id.into());
        self
    }

    pub fn with_timeout(mut self, seconds: f64) -> Self {
        self.instance.timeout_seconds = Some(seconds);
        self
    }
}

/// The final result of a job, as returned by /process.
pub type ProcessResponse = JobReport;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CancelRequest {
    pub job_id: JobId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CancelResponse {
    pub job_id: JobId,
    pub acknowledged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddBackendRequest {
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub backends: Vec<BackendInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LifecycleResponse {
    pub running: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusResponse {
    pub running: bool,
    pub queue_depths: QueueDepths,
    pub in_flight: usize,
    pub backends: Vec<BackendInfo>,
    pub completed_total: u64,
    pub failed_total: u64,
    pub cancelled_total: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
