use std::future::Future;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing::info;

use rollout_bench::ablation::{run_cleanup, run_lb, AblationRow, CleanupConfig, Component, LbConfig};
use rollout_bench::dapo::{heavy_tailed_spec, run_workload, DapoConfig, DapoRow};
use rollout_bench::scaling::{run_scaling, speedups, LatencyProfile, ScalingConfig};
use rollout_bench::write_csv;
use rollout_core::handler::HandlerRegistry;
use rollout_core::mock_llm::{LatencyModel, MockMode, MockPolicy, MockServer, Script, DEFAULT_VOCAB};
use rollout_core::server::{ServerConfig, ServerHandle};
use rollout_core::trainer::{Mode, SyntheticSpec, Workload};

#[derive(Parser)]
#[command(name = "rollout", version, about = "Rollout server, mock inference backend and experiment drivers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the rollout server until interrupted.
    Serve {
        /// TOML config; falls back to $ROLLOUT_CONFIG, then defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// host:port, overriding the config and $ROLLOUT_BIND.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Run a deterministic mock inference backend until interrupted.
    MockLlm(MockArgs),
    /// Write a synthetic reward workload file.
    Workload(WorkloadArgs),
    /// Experiment drivers. CSV goes to --out, or stdout.
    #[command(subcommand)]
    Bench(Bench),
}

#[derive(Args)]
struct MockArgs {
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    #[arg(long, default_value_t = 9000)]
    port: u16,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "hash")]
    mode: MockMode,
    #[arg(long, default_value_t = DEFAULT_VOCAB)]
    vocab_size: u32,
    #[arg(long, default_value_t = 0)]
    latency_mean_ms: u64,
    #[arg(long, default_value_t = 0)]
    latency_jitter_ms: u64,
    /// JSON script of completions; required for --mode script.
    #[arg(long)]
    script_file: Option<PathBuf>,
}

#[derive(Args)]
struct WorkloadArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    prompts: usize,
    #[arg(long, default_value_t = 4)]
    rollouts: usize,
    #[arg(long, default_value_t = 0.5)]
    p_informative: f64,
    #[arg(long, default_value_t = 40.0)]
    latency_median_ms: f64,
    /// Log-space spread of latencies; larger is heavier-tailed.
    #[arg(long, default_value_t = 1.0)]
    latency_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    error_rate: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DapoMode {
    Batch,
    Async,
    Both,
}

#[derive(Subcommand)]
enum Bench {
    /// Completed jobs per second for 1, 2 and 4 servers.
    Scaling {
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4])]
        servers: Vec<usize>,
        /// Total jobs per measurement.
        #[arg(long, default_value_t = 1200)]
        jobs: usize,
        /// Workers per stage on each server.
        #[arg(long, default_value_t = 8)]
        workers: usize,
        #[arg(long, default_value = "light")]
        latency_profile: LatencyProfile,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Drive these running servers instead of local ones (repeatable).
        #[arg(long)]
        connect: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail unless 2 servers reach 1.8x and 4 reach 3.2x.
        #[arg(long)]
        check: bool,
    },
    /// Batch-by-batch sampling against asynchronous replenishment.
    Dapo {
        /// Workload file; without it a heavy-tailed synthetic workload is
        /// generated per seed.
        #[arg(long)]
        workload: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        mode: DapoMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Consecutive seeds starting at --seed (synthetic workloads only).
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 8)]
        target: usize,
        /// In rollouts.
        #[arg(long, default_value_t = 32)]
        cap: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail unless async beats batch on wall time in 95% of seeds and
        /// on idle fraction in all of them. Needs --mode both.
        #[arg(long)]
        check: bool,
    },
    /// Routing-policy or stale-job-cleanup ablation.
    Ablation {
        #[arg(long)]
        component: Component,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail unless the component wins by a positive margin on every seed.
        #[arg(long)]
        check: bool,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    match rt.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

async fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve { config, bind } => serve(config, bind).await,
        Command::MockLlm(args) => mock_llm(args).await,
        Command::Workload(args) => workload(args),
        Command::Bench(b) => interruptible(bench(b)).await,
    }
}

/// Dropping the bench future on Ctrl-C drops its servers, which drain.
async fn interruptible(f: impl Future<Output = Result<()>>) -> Result<()> {
    tokio::select! {
        r = f => r,
        _ = tokio::signal::ctrl_c() => bail!("interrupted"),
    }
}

/// Registers the handlers now, so a signal sent right after the URL is
/// printed is not lost.
fn shutdown_signal() -> Result<impl Future<Output = ()>> {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate())?;
        let mut int = signal(SignalKind::interrupt())?;
        Ok(async move {
            tokio::select! {
                _ = int.recv() => {}
                _ = term.recv() => {}
            }
        })
    }
    #[cfg(not(unix))]
    Ok(async {
        let _ = tokio::signal::ctrl_c().await;
    })
}

async fn serve(config: Option<PathBuf>, bind: Option<String>) -> Result<()> {
    let mut cfg = ServerConfig::from_env(config.as_deref())?;
    if let Some(b) = bind {
        cfg.apply_bind(&b)?;
    }
    let addr = cfg.socket_addr()?;
    let h =
        ServerHandle::spawn(cfg, HandlerRegistry::with_builtins()).await.with_context(|| format!("binding {addr}"))?;
    let stop = shutdown_signal()?;
    info!(url = %h.url(), "rollout server listening");
    println!("{}", h.url());
    stop.await;
    info!("draining");
    h.shutdown().await?;
    Ok(())
}

async fn mock_llm(a: MockArgs) -> Result<()> {
    let mut policy = match (a.mode, &a.script_file) {
        (MockMode::Script, Some(path)) => {
            let script = Script::load(path).with_context(|| format!("reading script {}", path.display()))?;
            MockPolicy::scripted(a.seed, script)
        }
        (MockMode::Script, None) => bail!("--mode script needs --script-file"),
        (MockMode::Hash, _) => MockPolicy::hash(a.seed),
    };
    policy.vocab_size = a.vocab_size;
    policy = policy.with_latency(LatencyModel {
        mean: Duration::from_millis(a.latency_mean_ms),
        jitter: Duration::from_millis(a.latency_jitter_ms),
    });
    let addr = SocketAddr::new(a.bind, a.port);
    let m = MockServer::spawn(policy, addr).await.with_context(|| format!("binding {addr}"))?;
    let stop = shutdown_signal()?;
    info!(url = %m.base_url(), "mock backend listening");
    println!("{}", m.base_url());
    stop.await;
    m.shutdown().await;
    Ok(())
}

fn workload(a: WorkloadArgs) -> Result<()> {
    let spec = SyntheticSpec {
        prompts: a.prompts,
        rollouts_per_prompt: a.rollouts,
        p_informative: a.p_informative,
        latency_median_ms: a.latency_median_ms,
        latency_sigma: a.latency_sigma,
        error_rate: a.error_rate,
    };
    let w = Workload::synthetic(a.seed, spec);
    w.validate()?;
    w.save(&a.out)?;
    info!(path = %a.out.display(), prompts = w.prompts.len(), "workload written");
    Ok(())
}

async fn bench(b: Bench) -> Result<()> {
    match b {
        Bench::Scaling { servers, jobs, workers, latency_profile, seed, connect, out, check } => {
            let cfg = ScalingConfig { server_counts: servers, jobs, workers, profile: latency_profile, seed, connect };
            let rows = run_scaling(&cfg).await?;
            write_csv(out.as_deref(), &rows)?;
            let ratios = speedups(&rows);
            for (n, r) in &ratios {
                eprintln!("{n} servers: {r:.2}x");
            }
            if check {
                if rows.first().map(|r| r.servers) != Some(1) {
                    bail!("--check needs the first server count to be 1");
                }
                for (n, r) in ratios {
                    let need = match n {
                        2 => 1.8,
                        4 => 3.2,
                        _ => continue,
                    };
                    if r < need {
                        bail!("{n} servers reached {r:.2}x, below {need}x");
                    }
                }
            }
        }
        Bench::Dapo { workload, mode, seed, seeds, target, cap, out, check } => {
            let modes = match mode {
                DapoMode::Batch => vec![Mode::Batch],
                DapoMode::Async => vec![Mode::Async],
                DapoMode::Both => vec![Mode::Batch, Mode::Async],
            };
            let cfg = DapoConfig { target_informative: target, concurrency_cap: cap, ..DapoConfig::default() };
            let mut rows: Vec<DapoRow> = Vec::new();
            match workload {
                Some(path) => {
                    let w = Workload::load(&path).with_context(|| format!("loading {}", path.display()))?;
                    rows.extend(run_workload(&w, &modes, seed, cfg).await?);
                }
                None => {
                    for s in seed..seed + seeds.max(1) {
                        let w = Workload::synthetic(s, heavy_tailed_spec());
                        rows.extend(run_workload(&w, &modes, s, cfg).await?);
                    }
                }
            }
            write_csv(out.as_deref(), &rows)?;
            if check {
                if modes.len() != 2 {
                    bail!("--check needs --mode both");
                }
                let pairs: Vec<(&DapoRow, &DapoRow)> = rows.chunks(2).map(|p| (&p[0], &p[1])).collect();
                let faster = pairs.iter().filter(|(b, a)| a.wall_time < b.wall_time).count();
                let idle_ok = pairs.iter().all(|(b, a)| a.idle_fraction < b.idle_fraction);
                eprintln!("async faster in {faster}/{} runs; idle lower in all: {idle_ok}", pairs.len());
                if (faster as f64) < 0.95 * pairs.len() as f64 || !idle_ok {
                    bail!("async did not beat batch");
                }
            }
        }
        Bench::Ablation { component, seed, seeds, out, check } => {
            let mut rows: Vec<AblationRow> = Vec::new();
            for s in seed..seed + seeds.max(1) {
                let pair = match component {
                    Component::Lb => run_lb(s, LbConfig::default()).await?,
                    Component::Cleanup => run_cleanup(s, CleanupConfig::default()).await?,
                };
                eprintln!(
                    "seed {s}: {} {:.2}/s vs {} {:.2}/s",
                    pair[1].arm, pair[1].throughput, pair[0].arm, pair[0].throughput
                );
                rows.extend(pair);
            }
            write_csv(out.as_deref(), &rows)?;
            if check && rows.chunks(2).any(|p| p[1].throughput <= p[0].throughput) {
                bail!("component did not improve throughput on every seed");
            }
        }
    }
    Ok(())
}
