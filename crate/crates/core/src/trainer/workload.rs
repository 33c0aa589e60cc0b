//! Scripted reward workloads that drive both schedulers identically.

use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::server::ProcessRequest;

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("reading workload: {0}")]
    Io(#[from] std::io::Error),
    #[error("workload schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("workload is invalid: {0}")]
    Invalid(String),
}

fn sleepy() -> String {
    "sleepy".into()
}

/// One prompt: its scripted per-rollout rewards (null marks an
/// infrastructure error) and latencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadPrompt {
    pub prompt_id: String,
    #[serde(default = "sleepy")]
    pub task_name: String,
    #[serde(default)]
    pub payload: Value,
    pub rewards: Vec<Option<f64>>,
    pub latency_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub rollouts_per_prompt: usize,
    pub prompts: Vec<WorkloadPrompt>,
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub prompts: usize,
    pub rollouts_per_prompt: usize,
    pub p_informative: f64,
    /// Median rollout latency.
    pub latency_median_ms: f64,
    /// Log-space standard deviation; larger means heavier tail.
    pub latency_sigma: f64,
    pub error_rate: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            prompts: 64,
            rollouts_per_prompt: 4,
            p_informative: 0.5,
            latency_median_ms: 40.0,
            latency_sigma: 0.8,
            error_rate: 0.0,
        }
    }
}

impl Workload {
    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        let w: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<(), WorkloadError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.rollouts_per_prompt == 0 {
            return Err(WorkloadError::Invalid("rollouts_per_prompt must be positive".into()));
        }
        if self.prompts.is_empty() {
            return Err(WorkloadError::Invalid("workload has no prompts".into()));
        }
        for p in &self.prompts {
            if p.rewards.len() != self.rollouts_per_prompt || p.latency_ms.len() != self.rollouts_per_prompt {
                return Err(WorkloadError::Invalid(format!(
                    "prompt {} needs {} rewards and latencies",
                    p.prompt_id, self.rollouts_per_prompt
                )));
            }
            if p.latency_ms.iter().any(|l| !l.is_finite() || *l < 0.0) {
                return Err(WorkloadError::Invalid(format!("prompt {} has a bad latency", p.prompt_id)));
            }
        }
        Ok(())
    }

    /// Rewards are Bernoulli(1/2) per rollout, conditioned on the group
    /// being mixed (informative) or uniform; latencies are log-normal.
    pub fn synthetic(seed: u64, spec: SyntheticSpec) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let n = spec.rollouts_per_prompt.max(1);
        let latency = LogNormal::new(spec.latency_median_ms.max(1e-3).ln(), spec.latency_sigma.max(0.0))
            .expect("finite log-normal parameters");
        let prompts = (0..spec.prompts)
            .map(|i| {
                let informative = n >= 2 && rng.random_bool(spec.p_informative.clamp(0.0, 1.0));
                let mut rewards: Vec<f64> = if informative {
                    loop {
                        let r: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
                        if r.contains(&0.0) && r.contains(&1.0) {
                            break r;
                        }
                    }
                } else {
                    vec![f64::from(u8::from(rng.random_bool(0.5))); n]
                };
                let mut out: Vec<Option<f64>> = rewards.drain(..).map(Some).collect();
                for r in out.iter_mut() {
                    if rng.random_bool(spec.error_rate.clamp(0.0, 1.0)) {
                        *r = None;
                    }
                }
                WorkloadPrompt {
                    prompt_id: format!("p{i:04}"),
                    task_name: sleepy(),
                    payload: Value::Null,
                    rewards: out,
                    latency_ms: (0..n).map(|_| latency.sample(&mut rng)).collect(),
                }
            })
            .collect();
        Self { rollouts_per_prompt: n, prompts }
    }

    /// The request for rollout `k` of prompt `source`. Sleepy prompts get
    /// their scripted latency and reward injected.
    pub fn request(&self, source: usize, k: usize, job_id: String) -> ProcessRequest {
        let p = &self.prompts[source];
        let mut payload = p.payload.clone();
        if p.task_name == "sleepy" {
            let mut obj = match payload {
                Value::Object(m) => m,
                _ => Map::new(),
            };
            obj.insert("run_ms".into(), json!(p.latency_ms[k].round() as u64));
            match p.rewards[k] {
                Some(r) => {
                    obj.insert("reward".into(), json!(r));
                }
                None => {
                    obj.insert("fail_stage".into(), json!("RUN"));
                }
            }
            payload = Value::Object(obj);
        }
        ProcessRequest::new(p.task_name.clone(), payload).with_job_id(job_id)
    }
}
