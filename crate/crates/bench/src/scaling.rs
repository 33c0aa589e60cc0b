//! Completed jobs per second as the number of rollout servers grows.

use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, LogNormal};
use serde::Serialize;
use serde_json::{json, Value};
use tokio::task::JoinSet;

use rollout_core::pipeline::WorkerPoolConfig;
use rollout_core::server::ProcessRequest;
use rollout_core::trainer::RolloutClient;
use rollout_core::JobStatus;

use crate::cluster::{preflight, server_config, Cluster};
use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatencyProfile {
    /// 5/40/5 ms sleepy stages.
    Light,
    /// Log-normal RUN time, median 40 ms.
    HeavyTail,
}

impl FromStr for LatencyProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "light" => Ok(Self::Light),
            "heavy-tail" => Ok(Self::HeavyTail),
            other => Err(format!("unknown latency profile {other:?} (light, heavy-tail)")),
        }
    }
}

impl LatencyProfile {
    pub fn payloads(self, jobs: usize, seed: u64) -> Vec<Value> {
        let mut rng = StdRng::seed_from_u64(seed);
        let tail = LogNormal::new(40f64.ln(), 0.8).expect("finite parameters");
        (0..jobs)
            .map(|_| match self {
                Self::Light => json!({"init_ms": 5, "run_ms": 40, "eval_ms": 5}),
                Self::HeavyTail => {
                    let run = tail.sample(&mut rng).min(2_000.0).round() as u64;
                    json!({"init_ms": 5, "run_ms": run, "eval_ms": 5})
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ScalingConfig {
    pub server_counts: Vec<usize>,
    /// Total jobs per measurement, split evenly across servers.
    pub jobs: usize,
    /// Workers per stage on each server.
    pub workers: usize,
    pub profile: LatencyProfile,
    pub seed: u64,
    /// Existing servers to drive instead of spawning local ones.
    pub connect: Vec<String>,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            server_counts: vec![1, 2, 4],
            jobs: 1_200,
            workers: 8,
            profile: LatencyProfile::Light,
            seed: 0,
            connect: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub servers: usize,
    pub jobs: usize,
    pub wall_seconds: f64,
    pub throughput: f64,
}

/// Job `i` goes to server `i % n`; each server keeps at most `window`
/// requests outstanding. Any job that does not finish DONE is an error.
pub async fn drive(clients: &[RolloutClient], payloads: Vec<Value>, window: usize) -> Result<Duration, BenchError> {
    let n = clients.len();
    if n == 0 {
        return Err(BenchError::Invalid("no servers to drive".into()));
    }
    let mut shares: Vec<Vec<Value>> = vec![Vec::new(); n];
    for (i, p) in payloads.into_iter().enumerate() {
        shares[i % n].push(p);
    }
    let start = Instant::now();
    let mut per_server = JoinSet::new();
    for (client, share) in clients.iter().cloned().zip(shares) {
        per_server.spawn(async move {
            let mut live = JoinSet::new();
            for payload in share {
                if live.len() >= window.max(1) {
                    live.join_next().await.expect("nonempty").expect("request task panicked")?;
                }
                let client = client.clone();
                live.spawn(async move { run_one(&client, payload).await });
            }
            while let Some(r) = live.join_next().await {
                r.expect("request task panicked")?;
            }
            Ok::<_, BenchError>(())
        });
    }
    while let Some(r) = per_server.join_next().await {
        r.expect("server task panicked")?;
    }
    Ok(start.elapsed())
}

async fn run_one(client: &RolloutClient, payload: Value) -> Result<(), BenchError> {
    let r = client.process(&ProcessRequest::new("sleepy", payload)).await?;
    if r.status != JobStatus::Done {
        return Err(BenchError::Job {
            job_id: r.job_id.to_string(),
            status: r.status,
            detail: format!("{:?}", r.error),
        });
    }
    Ok(())
}

pub async fn run_scaling(cfg: &ScalingConfig) -> Result<Vec<ScalingRow>, BenchError> {
    let mut rows = Vec::new();
    for &n in &cfg.server_counts {
        if n == 0 {
            return Err(BenchError::Invalid("server count must be positive".into()));
        }
        let payloads = cfg.profile.payloads(cfg.jobs, cfg.seed);
        let window = 4 * cfg.workers;
        let wall = if cfg.connect.is_empty() {
            let cluster = Cluster::spawn(n, server_config(WorkerPoolConfig::uniform(cfg.workers))).await?;
            let wall = drive(cluster.clients(), payloads, window).await;
            cluster.shutdown().await?;
            wall?
        } else {
            if n > cfg.connect.len() {
                return Err(BenchError::Invalid(format!("{n} servers requested, {} given", cfg.connect.len())));
            }
            let clients: Vec<RolloutClient> = cfg.connect[..n].iter().map(RolloutClient::new).collect();
            preflight(&clients).await?;
            drive(&clients, payloads, window).await?
        };
        let secs = wall.as_secs_f64();
        let throughput = if cfg.jobs == 0 || secs <= 0.0 { 0.0 } else { cfg.jobs as f64 / secs };
        rows.push(ScalingRow { servers: n, jobs: cfg.jobs, wall_seconds: secs, throughput });
    }
    Ok(rows)
}

/// Throughput of each row relative to the first.
pub fn speedups(rows: &[ScalingRow]) -> Vec<(usize, f64)> {
    let base = rows.first().map_or(0.0, |r| r.throughput);
    rows.iter().map(|r| (r.servers, if base > 0.0 { r.throughput / base } else { 0.0 })).collect()
}
