//! Batch-by-batch dynamic sampling against asynchronous replenishment on
//! the same scripted workload.

use serde::Serialize;

use rollout_core::pipeline::WorkerPoolConfig;
use rollout_core::trainer::{IterationPlan, IterationResult, Mode, RolloutClient, SyntheticSpec, Trainer, Workload};

use crate::cluster::{server_config, Cluster};
use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DapoConfig {
    pub target_informative: usize,
    /// In rollouts.
    pub concurrency_cap: usize,
    pub workers: usize,
}

impl Default for DapoConfig {
    fn default() -> Self {
        Self { target_informative: 8, concurrency_cap: 32, workers: 64 }
    }
}

/// Informative probability 1/2, log-normal latencies with a heavy tail.
pub fn heavy_tailed_spec() -> SyntheticSpec {
    SyntheticSpec {
        prompts: 128,
        rollouts_per_prompt: 4,
        p_informative: 0.5,
        latency_median_ms: 40.0,
        latency_sigma: 1.0,
        error_rate: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DapoRow {
    pub seed: u64,
    pub mode: String,
    pub wall_time: f64,
    pub rollouts_issued: usize,
    pub idle_fraction: f64,
    pub informative: usize,
    pub waves: usize,
    pub cancelled: usize,
    pub carried_over: usize,
    /// Rollouts already recorded in carried-over groups.
    pub carried_partials: usize,
}

impl DapoRow {
    pub fn from_result(seed: u64, r: &IterationResult) -> Self {
        Self {
            seed,
            mode: match r.mode {
                Mode::Batch => "batch",
                Mode::Async => "async",
            }
            .into(),
            wall_time: r.wall_time.as_secs_f64(),
            rollouts_issued: r.rollouts_issued,
            idle_fraction: r.idle_fraction,
            informative: r.informative_groups.len(),
            waves: r.waves,
            cancelled: r.cancelled,
            carried_over: r.carried_over.len(),
            carried_partials: r.carried_over.iter().map(|g| g.outcomes.len()).sum(),
        }
    }
}

pub async fn run_mode(
    client: &RolloutClient,
    workload: &Workload,
    mode: Mode,
    seed: u64,
    cfg: DapoConfig,
) -> Result<DapoRow, BenchError> {
    workload.validate()?;
    let mut trainer = Trainer::new(vec![client.clone()], workload.clone());
    let plan = IterationPlan::new(cfg.target_informative, cfg.concurrency_cap);
    let r = trainer.run_iteration(mode, plan).await?;
    Ok(DapoRow::from_result(seed, &r))
}

/// Runs `modes` in order on one fresh local server.
pub async fn run_workload(
    workload: &Workload,
    modes: &[Mode],
    seed: u64,
    cfg: DapoConfig,
) -> Result<Vec<DapoRow>, BenchError> {
    workload.validate()?;
    let cluster = Cluster::spawn(1, server_config(WorkerPoolConfig::uniform(cfg.workers))).await?;
    let mut rows = Vec::new();
    for &mode in modes {
        match run_mode(&cluster.clients()[0], workload, mode, seed, cfg).await {
            Ok(row) => rows.push(row),
            Err(e) => {
                cluster.shutdown().await?;
                return Err(e);
            }
        }
    }
    cluster.shutdown().await?;
    Ok(rows)
}

/// One (batch, async) pair per seed on the synthetic workload `spec`.
pub async fn run_paired(
    seeds: &[u64],
    spec: SyntheticSpec,
    cfg: DapoConfig,
) -> Result<Vec<(DapoRow, DapoRow)>, BenchError> {
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let w = Workload::synthetic(seed, spec);
        let rows = run_workload(&w, &[Mode::Batch, Mode::Async], seed, cfg).await?;
        let mut it = rows.into_iter();
        out.push((it.next().expect("batch row"), it.next().expect("async row")));
    }
    Ok(out)
}
