//! Component ablations: backend routing policy, and cancelling stale
//! rollouts once the trainer has enough informative prompts.

use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use serde_json::json;
use tokio::task::JoinSet;

use rollout_core::backend::SelectionPolicy;
use rollout_core::mock_llm::{LatencyModel, MockPolicy, MockServer};
use rollout_core::pipeline::WorkerPoolConfig;
use rollout_core::server::ProcessRequest;
use rollout_core::trainer::{IterationPlan, SyntheticSpec, Trainer, Workload};
use rollout_core::JobStatus;

use crate::cluster::{server_config, Cluster};
use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Lb,
    Cleanup,
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lb" => Ok(Self::Lb),
            "cleanup" => Ok(Self::Cleanup),
            other => Err(format!("unknown component {other:?} (lb, cleanup)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub component: String,
    pub arm: String,
    pub seed: u64,
    pub wall_seconds: f64,
    /// Jobs for lb, informative groups for cleanup.
    pub completed: usize,
    pub throughput: f64,
}

impl AblationRow {
    fn new(component: &str, arm: &str, seed: u64, wall: Duration, completed: usize) -> Self {
        let secs = wall.as_secs_f64();
        Self {
            component: component.into(),
            arm: arm.into(),
            seed,
            wall_seconds: secs,
            completed,
            throughput: if secs > 0.0 { completed as f64 / secs } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbConfig {
    pub fast_ms: u64,
    pub slow_ms: u64,
    pub jobs: usize,
    /// RUN workers; caps how many generations are outstanding.
    pub workers: usize,
}

impl Default for LbConfig {
    fn default() -> Self {
        Self { fast_ms: 50, slow_ms: 500, jobs: 120, workers: 16 }
    }
}

/// Static equal split against the load-aware min-heap, both over one fast
/// and one slow backend. Rows are (static, min-heap).
pub async fn run_lb(seed: u64, cfg: LbConfig) -> Result<[AblationRow; 2], BenchError> {
    let mut rng = StdRng::seed_from_u64(seed);
    let calls: Vec<u32> = (0..cfg.jobs).map(|_| rng.random_range(1..=2)).collect();
    let static_split = lb_arm(seed, cfg, &calls, SelectionPolicy::StaticSplit).await?;
    let heap = lb_arm(seed, cfg, &calls, SelectionPolicy::LeastInFlight).await?;
    Ok([
        AblationRow::new("lb", "static_split", seed, static_split, cfg.jobs),
        AblationRow::new("lb", "min_heap", seed, heap, cfg.jobs),
    ])
}

fn mock(seed: u64, ms: u64) -> MockPolicy {
    let mean = Duration::from_millis(ms);
    MockPolicy::hash(seed).with_latency(LatencyModel { mean, jitter: mean / 10 })
}

async fn lb_arm(seed: u64, cfg: LbConfig, calls: &[u32], policy: SelectionPolicy) -> Result<Duration, BenchError> {
    let fast = MockServer::spawn_local(mock(seed, cfg.fast_ms)).await?;
    let slow = MockServer::spawn_local(mock(seed.wrapping_add(1), cfg.slow_ms)).await?;
    let workers = WorkerPoolConfig { init: cfg.workers, run: cfg.workers, eval: cfg.workers };
    let cluster = Cluster::spawn(1, rollout_core::server::ServerConfig { policy, ..server_config(workers) }).await?;
    let client = cluster.clients()[0].clone();
    // Registration order alternates with the seed so neither backend is
    // always first in line.
    let order = if seed.is_multiple_of(2) { [&fast, &slow] } else { [&slow, &fast] };
    for m in order {
        client.add_llm_server(&m.base_url()).await?;
    }
    let start = Instant::now();
    let mut set = JoinSet::new();
    for (i, &k) in calls.iter().enumerate() {
        let client = client.clone();
        let req = ProcessRequest::new("sleepy", json!({"llm_calls": k})).with_job_id(format!("lb-{seed}-{i}"));
        set.spawn(async move { client.process(&req).await });
    }
    let mut failure = None;
    while let Some(r) = set.join_next().await {
        let r = r.expect("request task panicked");
        match r {
            Ok(r) if r.status == JobStatus::Done => {}
            Ok(r) => {
                failure.get_or_insert(BenchError::Job {
                    job_id: r.job_id.to_string(),
                    status: r.status,
                    detail: format!("{:?}", r.error),
                });
            }
            Err(e) => {
                failure.get_or_insert(e.into());
            }
        }
    }
    let wall = start.elapsed();
    cluster.shutdown().await?;
    fast.shutdown().await;
    slow.shutdown().await;
    match failure {
        Some(e) => Err(e),
        None => Ok(wall),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanupConfig {
    pub prompts: usize,
    pub rollouts_per_prompt: usize,
    pub p_informative: f64,
    pub base_ms: f64,
    pub straggler_fraction: f64,
    pub straggler_factor: f64,
    pub target_informative: usize,
    pub concurrency_cap: usize,
}

impl Default for CleanupConfig {
    fn default() -> Self {
        Self {
            prompts: 128,
            rollouts_per_prompt: 4,
            p_informative: 0.5,
            base_ms: 40.0,
            straggler_fraction: 0.1,
            straggler_factor: 20.0,
            target_informative: 8,
            concurrency_cap: 32,
        }
    }
}

/// Near-constant latencies, with a seeded `straggler_fraction` of
/// rollouts slowed by `straggler_factor`.
pub fn straggler_workload(seed: u64, cfg: CleanupConfig) -> Workload {
    let spec = SyntheticSpec {
        prompts: cfg.prompts,
        rollouts_per_prompt: cfg.rollouts_per_prompt,
        p_informative: cfg.p_informative,
        latency_median_ms: cfg.base_ms,
        latency_sigma: 0.2,
        error_rate: 0.0,
    };
    let mut w = Workload::synthetic(seed, spec);
    let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed);
    for p in &mut w.prompts {
        for l in &mut p.latency_ms {
            if rng.random_bool(cfg.straggler_fraction) {
                *l *= cfg.straggler_factor;
            }
        }
    }
    w
}

/// Async collection with and without cancelling stale rollouts at the
/// target. Rows are (wait-for-all, early termination).
pub async fn run_cleanup(seed: u64, cfg: CleanupConfig) -> Result<[AblationRow; 2], BenchError> {
    let w = straggler_workload(seed, cfg);
    let mut rows = Vec::with_capacity(2);
    for (arm, early) in [("wait_for_all", false), ("early_termination", true)] {
        let cluster = Cluster::spawn(1, server_config(WorkerPoolConfig::uniform(64))).await?;
        let mut trainer = Trainer::new(cluster.clients().to_vec(), w.clone());
        let plan = IterationPlan {
            early_termination: early,
            ..IterationPlan::new(cfg.target_informative, cfg.concurrency_cap)
        };
        let r = trainer.run_iteration_async(plan).await;
        cluster.shutdown().await?;
        let r = r?;
        rows.push(AblationRow::new("cleanup", arm, seed, r.wall_time, r.informative_groups.len()));
    }
    let mut it = rows.into_iter();
    Ok([it.next().expect("two arms"), it.next().expect("two arms")])
}
