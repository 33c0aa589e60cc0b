//! Pipelined engine against the serial baseline on identical sleepy jobs.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::json;

use rollout_core::backend::{LlmRouter, RetryConfig, SelectionPolicy};
use rollout_core::handler::{HandlerRegistry, StageContext};
use rollout_core::pipeline::{run_serial, Counters, Pipeline, PipelineConfig, SubmitRequest, WorkerPoolConfig};
use rollout_core::sandbox::SandboxManager;
use rollout_core::{JobStatus, SystemClock};

use crate::BenchError;

const GRACE: Duration = Duration::from_millis(200);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapConfig {
    pub jobs: usize,
    /// Duration of each of the three stages.
    pub stage: Duration,
    pub workers: usize,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self { jobs: 10, stage: Duration::from_secs(1), workers: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapResult {
    pub jobs: usize,
    pub pipelined_seconds: f64,
    pub serial_seconds: f64,
    /// `(jobs + 2) * stage` for one worker per stage.
    pub ideal_seconds: f64,
}

impl OverlapResult {
    pub fn speedup(&self) -> f64 {
        self.serial_seconds / self.pipelined_seconds
    }
}

fn requests(cfg: OverlapConfig) -> Vec<SubmitRequest> {
    let ms = cfg.stage.as_millis() as u64;
    (0..cfg.jobs).map(|_| SubmitRequest::new("sleepy", json!({"init_ms": ms, "run_ms": ms, "eval_ms": ms}))).collect()
}

fn context() -> Result<(LlmRouter, SandboxManager), BenchError> {
    let router = LlmRouter::new(SelectionPolicy::default(), RetryConfig::default());
    let sandbox = SandboxManager::with_defaults().map_err(|e| BenchError::Invalid(e.to_string()))?;
    Ok((router, sandbox))
}

async fn pipelined(cfg: OverlapConfig) -> Result<Duration, BenchError> {
    let (router, sandbox) = context()?;
    let config =
        PipelineConfig { workers: WorkerPoolConfig::uniform(cfg.workers), grace: GRACE, clock: SystemClock::shared() };
    let p = Pipeline::start(
        config,
        Arc::new(HandlerRegistry::with_builtins()),
        router,
        sandbox,
        Arc::new(Counters::default()),
    );
    let start = Instant::now();
    let mut handles = Vec::with_capacity(cfg.jobs);
    for req in requests(cfg) {
        handles.push(p.submit(req).map_err(|e| BenchError::Invalid(e.to_string()))?);
    }
    let mut bad = None;
    for h in handles {
        let r = h.wait().await;
        if r.status != JobStatus::Done {
            bad.get_or_insert(BenchError::Job {
                job_id: r.job_id.to_string(),
                status: r.status,
                detail: format!("{:?}", r.error),
            });
        }
    }
    let wall = start.elapsed();
    p.drain_and_stop().await;
    bad.map_or(Ok(wall), Err)
}

async fn serial(cfg: OverlapConfig) -> Result<Duration, BenchError> {
    let (router, sandbox) = context()?;
    let ctx = StageContext::new(router, sandbox);
    let registry = HandlerRegistry::with_builtins();
    let start = Instant::now();
    let reports = run_serial(&registry, &ctx, SystemClock::shared(), GRACE, requests(cfg))
        .await
        .map_err(|e| BenchError::Invalid(e.to_string()))?;
    let wall = start.elapsed();
    if let Some(r) = reports.iter().find(|r| r.status != JobStatus::Done) {
        return Err(BenchError::Job {
            job_id: r.job_id.to_string(),
            status: r.status,
            detail: format!("{:?}", r.error),
        });
    }
    Ok(wall)
}

/// Both runs share the clock but not workers, so they run side by side.
pub async fn run_overlap(cfg: OverlapConfig) -> Result<OverlapResult, BenchError> {
    let (p, s) = tokio::join!(pipelined(cfg), serial(cfg));
    let ideal = cfg.stage * (cfg.jobs as u32 + 2);
    Ok(OverlapResult {
        jobs: cfg.jobs,
        pipelined_seconds: p?.as_secs_f64(),
        serial_seconds: s?.as_secs_f64(),
        ideal_seconds: ideal.as_secs_f64(),
    })
}
