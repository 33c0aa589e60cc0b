//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset: `cargo test -p rollout-bench --test acceptance -- 2 7`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::future::Future;
use std::pin::Pin;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use tokio::task::JoinSet;

use rollout_bench::ablation::{run_cleanup, run_lb, CleanupConfig, LbConfig};
use rollout_bench::cluster::{server_config, Cluster};
use rollout_bench::dapo::{heavy_tailed_spec, run_paired, DapoConfig};
use rollout_bench::overlap::{run_overlap, OverlapConfig};
use rollout_bench::scaling::{run_scaling, speedups, ScalingConfig};
use rollout_core::backend::{BackendPool, LlmRouter, RetryConfig, SelectionPolicy};
use rollout_core::handler::HandlerRegistry;
use rollout_core::mock_llm::{hash_generate, MockPolicy, MockServer, ToyTokenizer};
use rollout_core::model::trajectory::flatten_turns;
use rollout_core::pipeline::{Counters, Pipeline, PipelineConfig, SubmitRequest, WorkerPoolConfig};
use rollout_core::sandbox::{cache_decision, CacheDecision, CacheKey, CacheMode, SandboxManager};
use rollout_core::server::ProcessRequest;
use rollout_core::trainer::{checkpoint_swap, hierarchical_assign, host_of};
use rollout_core::{JobStatus, ManualClock, PausableTimer, Role, SamplingParams, Stage, SystemClock};

type Verdict = Result<String, String>;
type Check = Pin<Box<dyn Future<Output = Verdict>>>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// 10 jobs, one worker per stage, 1s stages: (10 + 2) * 1s when pipelined.
async fn pipeline_overlap() -> Verdict {
    let r = run_overlap(OverlapConfig::default()).await.map_err(err)?;
    let bound = 1.15 * r.ideal_seconds;
    let detail = format!(
        "pipelined {:.2}s (bound {:.2}s), serial {:.2}s, speedup {:.2}x",
        r.pipelined_seconds,
        bound,
        r.serial_seconds,
        r.speedup()
    );
    ensure(r.pipelined_seconds <= bound && r.speedup() >= 2.0, || detail.clone())?;
    Ok(detail)
}

/// Lowest counter wins; ties go to the earliest registration.
fn argmin_fifo(counters: &[u64]) -> usize {
    let mut best = 0;
    for i in 1..counters.len() {
        if counters[i] < counters[best] {
            best = i;
        }
    }
    best
}

async fn min_heap_balance() -> Verdict {
    let addr = |i: usize| format!("http://10.9.0.{}:8000", i + 1);
    let mut steps = 0usize;
    for s in 1..=5 {
        for k in 0..=100 {
            let mut pool = BackendPool::new(SelectionPolicy::LeastAssigned);
            for i in 0..s {
                pool.add(&addr(i)).map_err(err)?;
            }
            let mut counters = vec![0u64; s];
            for j in 0..k {
                let want = argmin_fifo(&counters);
                let got = pool.assign(&format!("j{j}")).ok_or("empty pool")?;
                ensure(got == addr(want), || format!("S={s} K={k} step {j}: got {got}, oracle {}", addr(want)))?;
                counters[want] += 1;
                steps += 1;
            }
            let spread = counters.iter().max().unwrap() - counters.iter().min().unwrap();
            ensure(spread <= 1, || format!("S={s} K={k}: spread {spread}"))?;
            let snap: Vec<u64> = pool.snapshot().iter().map(|b| b.counter).collect();
            ensure(snap == counters, || format!("S={s} K={k}: counters {snap:?} vs {counters:?}"))?;
        }
    }
    Ok(format!("{steps} selections over S<=5, K<=100 match the oracle"))
}

fn pipeline(workers: usize, router: LlmRouter) -> Result<Arc<Pipeline>, String> {
    let config = PipelineConfig {
        workers: WorkerPoolConfig::uniform(workers),
        grace: Duration::from_millis(200),
        clock: SystemClock::shared(),
    };
    let sandbox = SandboxManager::with_defaults().map_err(err)?;
    Ok(Pipeline::start(
        config,
        Arc::new(HandlerRegistry::with_builtins()),
        router,
        sandbox,
        Arc::new(Counters::default()),
    ))
}

async fn stickiness() -> Verdict {
    let mut mocks = Vec::new();
    for seed in 1..=3 {
        mocks.push(MockServer::spawn_local(MockPolicy::hash(seed)).await.map_err(err)?);
    }
    let router = LlmRouter::new(SelectionPolicy::LeastAssigned, RetryConfig::default());
    for m in &mocks {
        router.add_backend(&m.base_url()).map_err(err)?;
    }
    let p = pipeline(16, router)?;
    let mut rng = StdRng::seed_from_u64(3);
    let mut jobs = Vec::new();
    for i in 0..100 {
        let calls: u32 = rng.random_range(2..=6);
        let h = p
            .submit(SubmitRequest::new("sleepy", json!({"llm_calls": calls})).with_id(format!("sticky-{i}")))
            .map_err(err)?;
        jobs.push((h, calls));
    }
    let mut used = HashSet::new();
    let mut total = 0u64;
    let mut result = Ok(());
    for (h, calls) in &jobs {
        let r = h.wait().await;
        let addrs = h.backend_calls();
        let distinct: HashSet<&String> = addrs.iter().collect();
        if r.status != JobStatus::Done || addrs.len() != *calls as usize || distinct.len() != 1 {
            result = Err(format!("{}: {:?}, {} calls over {distinct:?}", h.id(), r.status, addrs.len()));
            break;
        }
        used.extend(addrs);
        total += u64::from(*calls);
    }
    p.drain_and_stop().await;
    result?;
    let served: u64 = mocks.iter().map(|m| m.requests()).sum();
    ensure(served == total, || format!("backends served {served} generations, jobs made {total}"))?;
    ensure(used.len() == 3, || format!("only {} backends used", used.len()))?;
    Ok(format!("100 jobs, {total} calls, 0 address changes, 3 backends used"))
}

async fn checkpoint_swap_check() -> Verdict {
    let old = MockServer::spawn_local(MockPolicy::hash(100)).await.map_err(err)?;
    let new = MockServer::spawn_local(MockPolicy::hash(200)).await.map_err(err)?;
    let cluster = Cluster::spawn(1, server_config(WorkerPoolConfig::uniform(16))).await.map_err(err)?;
    let c = cluster.clients()[0].clone();
    c.add_llm_server(&old.base_url()).await.map_err(err)?;
    let params = SamplingParams { max_tokens: 6, ..SamplingParams::default() };
    // Generations start 300ms in, inside the 500ms window opened at 100ms.
    let mut jobs = JoinSet::new();
    for i in 0..10 {
        let c = c.clone();
        let mut req =
            ProcessRequest::new("sleepy", json!({"init_ms": 300, "llm_calls": 2})).with_job_id(format!("swap-{i}"));
        req.sampling_params = params.clone();
        jobs.spawn(async move { c.process(&req).await });
    }
    tokio::time::sleep(Duration::from_millis(100)).await;
    let in_flight = c.status().await.map_err(err)?.in_flight;
    let report = checkpoint_swap(&c, &[new.base_url()], Duration::from_millis(500)).await.map_err(err)?;
    let mut done = 0;
    let mut fingerprint_ok = true;
    while let Some(r) = jobs.join_next().await {
        let r = r.map_err(err)?.map_err(err)?;
        if r.status == JobStatus::Done {
            done += 1;
        }
        for (k, turn) in r.trajectory.iter().enumerate().filter(|(_, t)| t.role == Role::Assistant) {
            let prompt = flatten_turns(&r.trajectory[..k]);
            fingerprint_ok &= turn.output_ids == hash_generate(200, 512, &prompt, &params).output_ids;
        }
    }
    cluster.shutdown().await.map_err(err)?;
    let detail = format!(
        "{in_flight} in flight at swap, {done}/10 DONE, empty window {:.0}ms, new-seed fingerprint {}, old/new backend calls {}/{}",
        report.empty_window.as_secs_f64() * 1e3,
        if fingerprint_ok { "on every generation" } else { "MISSING" },
        old.requests(),
        new.requests()
    );
    ensure(
        in_flight == 10 && done == 10 && fingerprint_ok && report.empty_window >= Duration::from_millis(500),
        || detail.clone(),
    )?;
    Ok(detail)
}

fn random_params(rng: &mut StdRng) -> SamplingParams {
    SamplingParams {
        temperature: rng.random_range(0.0..2.0),
        top_p: rng.random_range(0.05..=1.0),
        max_tokens: rng.random_range(1..=24),
        stop_token_ids: if rng.random_bool(0.3) { vec![rng.random_range(0..512)] } else { Vec::new() },
    }
}

async fn token_fidelity() -> Verdict {
    const SEED: u64 = 77;
    let mock = MockServer::spawn_local(MockPolicy::hash(SEED)).await.map_err(err)?;
    let cluster = Cluster::spawn(1, server_config(WorkerPoolConfig::uniform(32))).await.map_err(err)?;
    let c = cluster.clients()[0].clone();
    c.add_llm_server(&mock.base_url()).await.map_err(err)?;
    let mut rng = StdRng::seed_from_u64(5);
    let mut set = JoinSet::new();
    let mut checked = 0usize;
    let mut mismatch = None;
    let mut generations = 0usize;
    for i in 0..1000 {
        let len = rng.random_range(1..=40);
        let text: String = (0..len).map(|_| char::from(rng.random_range(b' '..=b'~'))).collect();
        let mut req = ProcessRequest::new("echo", json!({"prompt_text": text, "turns": rng.random_range(1..=3)}))
            .with_job_id(format!("tok-{i}"));
        req.sampling_params = random_params(&mut rng);
        if set.len() >= 64 {
            collect(set.join_next().await, &mut checked, &mut generations, &mut mismatch);
        }
        let c = c.clone();
        set.spawn(async move {
            let r = c.process(&req).await;
            (req.sampling_params, r)
        });
    }
    while let Some(j) = set.join_next().await {
        collect(Some(j), &mut checked, &mut generations, &mut mismatch);
    }
    cluster.shutdown().await.map_err(err)?;
    if let Some(m) = mismatch {
        return Err(m);
    }
    let served = mock.requests() as usize;
    ensure(served == generations, || format!("backend served {served}, trajectories hold {generations}"))?;

    let tok = ToyTokenizer::ambiguous();
    let ids = [tok.id_of("a").ok_or("no piece a")?, tok.id_of("b").ok_or("no piece b")?];
    let probe = tok.probe(&ids);
    ensure(probe.drifted, || format!("probe did not drift: {probe:?}"))?;
    Ok(format!(
        "{checked} rollouts, {generations} generations byte-identical; drift probe {:?} -> {:?}",
        probe.original_ids, probe.roundtrip_ids
    ))
}

type Joined = Result<
    (SamplingParams, Result<rollout_core::JobReport, rollout_core::trainer::ClientError>),
    tokio::task::JoinError,
>;

fn collect(j: Option<Joined>, checked: &mut usize, generations: &mut usize, mismatch: &mut Option<String>) {
    let Some(j) = j else { return };
    let (params, r) = match j {
        Ok(x) => x,
        Err(e) => {
            mismatch.get_or_insert(e.to_string());
            return;
        }
    };
    let r = match r {
        Ok(r) => r,
        Err(e) => {
            mismatch.get_or_insert(e.to_string());
            return;
        }
    };
    if r.status != JobStatus::Done {
        mismatch.get_or_insert(format!("{} ended {:?}: {:?}", r.job_id, r.status, r.error));
        return;
    }
    for (k, turn) in r.trajectory.iter().enumerate().filter(|(_, t)| t.role == Role::Assistant) {
        let expect = hash_generate(77, 512, &flatten_turns(&r.trajectory[..k]), &params);
        *generations += 1;
        if turn.output_ids != expect.output_ids || turn.logprobs != expect.logprobs {
            mismatch.get_or_insert(format!("{} turn {k}: {:?} vs {:?}", r.job_id, turn.output_ids, expect.output_ids));
        }
    }
    *checked += 1;
}

async fn cancel_and_drain() -> Verdict {
    let cluster = Cluster::spawn(1, server_config(WorkerPoolConfig::uniform(8))).await.map_err(err)?;
    let service = cluster.servers()[0].service().clone();
    let c = cluster.clients()[0].clone();
    let mut rng = StdRng::seed_from_u64(6);
    let mut calls = JoinSet::new();
    for i in 0..200 {
        let shell = rng.random_bool(0.3);
        let spec = json!({
            "init_ms": rng.random_range(0..50),
            "run_ms": rng.random_range(0..400),
            "shell": shell,
            "sandbox": !shell && rng.random_bool(0.2),
            "fail_stage": if rng.random_bool(0.1) { json!("EVAL") } else { Value::Null },
        });
        let req = ProcessRequest::new("sleepy", spec).with_job_id(format!("fz-{i}"));
        let c = c.clone();
        calls.spawn(async move { (i, c.process(&req).await) });
    }
    let mut cancels = JoinSet::new();
    for _ in 0..80 {
        let id = format!("fz-{}", rng.random_range(0..200)).into();
        let delay = Duration::from_millis(rng.random_range(0..3_000));
        let c = c.clone();
        cancels.spawn(async move {
            tokio::time::sleep(delay).await;
            // 404 when the cancel overtakes its /process.
            let _ = c.cancel(&id).await;
        });
    }
    tokio::time::sleep(Duration::from_millis(rng.random_range(2_000..3_500))).await;
    c.stop().await.map_err(err)?;

    let mut returned: HashMap<usize, usize> = HashMap::new();
    let mut statuses: HashMap<&'static str, usize> = HashMap::new();
    let deadline = Instant::now() + Duration::from_secs(30);
    while let Some(j) = tokio::time::timeout_at(deadline.into(), calls.join_next())
        .await
        .map_err(|_| "a /process call never returned")?
    {
        let (i, r) = j.map_err(err)?;
        *returned.entry(i).or_default() += 1;
        let key = match r {
            Ok(r) if r.status == JobStatus::Done => "done",
            Ok(r) if r.status == JobStatus::Failed => "failed",
            Ok(r) if r.status == JobStatus::Cancelled => "cancelled",
            Ok(r) => return Err(format!("{} returned non-terminal {:?}", r.job_id, r.status)),
            Err(e) if e.status() == Some(503) => "refused",
            Err(e) => return Err(format!("fz-{i}: {e}")),
        };
        *statuses.entry(key).or_default() += 1;
    }
    while cancels.join_next().await.is_some() {}
    ensure(returned.len() == 200 && returned.values().all(|&n| n == 1), || {
        format!(
            "{} distinct returns, duplicates {:?}",
            returned.len(),
            returned.iter().filter(|(_, &n)| n != 1).collect::<Vec<_>>()
        )
    })?;
    let s = service.status().await;
    let seen = |k| statuses.get(k).copied().unwrap_or(0) as u64;
    ensure(
        [s.completed_total, s.failed_total, s.cancelled_total] == [seen("done"), seen("failed"), seen("cancelled")],
        || format!("server counters {s:?} disagree with callers {statuses:?}"),
    )?;
    tokio::time::sleep(Duration::from_millis(200)).await;
    let live = service.sandbox().live_count();
    let audit = cluster.audit();
    cluster.shutdown().await.map_err(err)?;
    ensure(live == 0 && audit.is_clean(), || format!("{live} live runtimes, {audit:?}"))?;
    Ok(format!("200 calls returned once each {statuses:?}; 0 orphan groups, 0 leaked addresses"))
}

async fn phase_timing() -> Verdict {
    let mut rng = StdRng::seed_from_u64(7);
    let mut steps = 0usize;
    for case in 0..10_000 {
        let clock = Arc::new(ManualClock::new());
        let mut t = PausableTimer::new(clock.clone());
        let mut active: Option<Stage> = None;
        let mut want = [0u64; 3];
        let mut queued = 0u64;
        for _ in 0..rng.random_range(1..60) {
            steps += 1;
            match rng.random_range(0..3) {
                0 => {
                    let stage = Stage::ALL[rng.random_range(0..3)];
                    let ok = t.enter_phase(stage).is_ok();
                    ensure(ok == active.is_none(), || format!("case {case}: enter {stage:?} with {active:?}"))?;
                    if ok {
                        active = Some(stage);
                    }
                }
                1 => {
                    let ok = t.exit_phase().is_ok();
                    ensure(ok == active.is_some(), || format!("case {case}: exit with {active:?}"))?;
                    active = None;
                }
                _ => {
                    let ns = rng.random_range(0..5_000_000_000u64);
                    clock.advance(Duration::from_nanos(ns));
                    match active {
                        Some(stage) => want[stage.index()] += ns,
                        None => queued += ns,
                    }
                }
            }
            for stage in Stage::ALL {
                let got = t.stage_elapsed(stage);
                ensure(got == Duration::from_nanos(want[stage.index()]), || {
                    format!("case {case}: {stage:?} {got:?} vs {}ns", want[stage.index()])
                })?;
            }
        }
        let total: u64 = want.iter().sum();
        ensure(t.elapsed() == Duration::from_nanos(total), || {
            format!("case {case}: elapsed {:?} includes some of {queued}ns queue wait", t.elapsed())
        })?;
    }
    Ok(format!("10000 interleavings, {steps} steps, exact to the nanosecond"))
}

async fn dapo_async_vs_batch() -> Verdict {
    let seeds: Vec<u64> = (0..20).collect();
    let pairs = run_paired(&seeds, heavy_tailed_spec(), DapoConfig::default()).await.map_err(err)?;
    let faster = pairs.iter().filter(|(b, a)| a.wall_time < b.wall_time).count();
    let idler =
        pairs.iter().filter(|(b, a)| a.idle_fraction >= b.idle_fraction).map(|(b, _)| b.seed).collect::<Vec<_>>();
    let unequal = pairs.iter().filter(|(b, a)| a.informative != b.informative).count();
    let mean = |f: &dyn Fn(&(rollout_bench::dapo::DapoRow, rollout_bench::dapo::DapoRow)) -> f64| {
        pairs.iter().map(f).sum::<f64>() / pairs.len() as f64
    };
    let detail = format!(
        "async faster in {faster}/20 seeds; mean wall {:.3}s vs {:.3}s; mean idle {:.3} vs {:.3}; idle not lower in {idler:?}",
        mean(&|p| p.1.wall_time),
        mean(&|p| p.0.wall_time),
        mean(&|p| p.1.idle_fraction),
        mean(&|p| p.0.idle_fraction),
    );
    ensure(faster >= 19 && idler.is_empty() && unequal == 0, || detail.clone())?;
    Ok(detail)
}

async fn scaling() -> Verdict {
    let rows = run_scaling(&ScalingConfig::default()).await.map_err(err)?;
    let s = speedups(&rows);
    let ratio = |n| s.iter().find(|(k, _)| *k == n).map_or(0.0, |(_, r)| *r);
    let detail = format!(
        "throughput {} ; 2 servers {:.2}x, 4 servers {:.2}x",
        rows.iter().map(|r| format!("N={}: {:.1}/s", r.servers, r.throughput)).collect::<Vec<_>>().join(", "),
        ratio(2),
        ratio(4)
    );
    ensure(ratio(2) >= 1.8 && ratio(4) >= 3.2, || detail.clone())?;
    Ok(detail)
}

async fn ablations() -> Verdict {
    let mut lb = Vec::new();
    let mut cleanup = Vec::new();
    for seed in 0..5 {
        let [st, heap] = run_lb(seed, LbConfig::default()).await.map_err(err)?;
        lb.push(heap.throughput - st.throughput);
        let [wait, early] = run_cleanup(seed, CleanupConfig::default()).await.map_err(err)?;
        cleanup.push(early.throughput - wait.throughput);
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:+.2}")).collect::<Vec<_>>().join(" ");
    let detail =
        format!("min-heap minus static jobs/s [{}]; early minus wait-for-all groups/s [{}]", fmt(&lb), fmt(&cleanup));
    ensure(lb.iter().chain(&cleanup).all(|&m| m > 0.0), || detail.clone())?;
    Ok(detail)
}

async fn cache_truth_table() -> Verdict {
    use CacheDecision::{Hit, Rebuild};
    let cached = CacheKey::new("ubuntu:22.04", "1.0", "lock-a");
    // SCRATCH always rebuilds; VERSIONED keys on base image and framework
    // version; LOCK keys on the lockfile digest.
    let expect = |mode: CacheMode, bv: bool, lock: bool| match mode {
        CacheMode::Scratch => Rebuild,
        CacheMode::Versioned => {
            if bv {
                Hit
            } else {
                Rebuild
            }
        }
        CacheMode::Lock => {
            if lock {
                Hit
            } else {
                Rebuild
            }
        }
    };
    let mut n = 0;
    for mode in [CacheMode::Scratch, CacheMode::Versioned, CacheMode::Lock] {
        for bv in [true, false] {
            for lock in [true, false] {
                let new = CacheKey::new(
                    if bv { "ubuntu:22.04" } else { "debian:12" },
                    "1.0",
                    if lock { "lock-a" } else { "lock-b" },
                );
                let got = cache_decision(mode, Some(&cached), &new);
                ensure(got == expect(mode, bv, lock), || {
                    format!("{mode:?} base/version match={bv} lock match={lock}: {got:?}")
                })?;
                n += 1;
            }
        }
    }
    Ok(format!("{n}/12 combinations"))
}

async fn hierarchical_assignment() -> Verdict {
    let mut rng = StdRng::seed_from_u64(12);
    let hosts: Vec<String> = (1..=4).map(|i| format!("10.0.0.{i}")).collect();
    let mut local = 0usize;
    for trial in 0..8_000 {
        let ns = rng.random_range(1..=6);
        let nb = rng.random_range(1..=6);
        let servers: BTreeSet<String> =
            (0..ns).map(|i| format!("http://{}:{}", hosts[rng.random_range(0..4)], 8000 + i)).collect();
        let servers: Vec<String> = servers.into_iter().collect();
        let backends: Vec<String> =
            (0..nb).map(|i| format!("http://{}:{}/v1", hosts[rng.random_range(0..4)], 9000 + i)).collect();
        let t = hierarchical_assign(&servers, &backends);

        let mut placed: Vec<&String> = t.servers.values().flatten().collect();
        placed.sort();
        let mut want: Vec<&String> = backends.iter().collect();
        want.sort();
        ensure(placed == want, || format!("trial {trial}: placement {placed:?} vs {want:?}"))?;
        let server_hosts: HashSet<String> = servers.iter().map(|s| host_of(s)).collect();
        for b in &backends {
            let s = t.server_of(b).ok_or_else(|| format!("trial {trial}: {b} unplaced"))?;
            let matched = server_hosts.contains(&host_of(b));
            ensure(t.local.contains(b) == matched, || format!("trial {trial}: {b} local flag wrong"))?;
            ensure(!matched || host_of(s) == host_of(b), || format!("trial {trial}: {b} placed on {s}"))?;
            local += usize::from(matched);
        }
        let counts: Vec<usize> = t.remote_counts().values().copied().collect();
        let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
        ensure(spread <= 1, || format!("trial {trial}: remainder counts {counts:?}"))?;
    }
    Ok(format!("8000 random topologies, {local} host matches honored, remainder spread <= 1"))
}

struct Criterion {
    number: usize,
    name: &'static str,
    limit: Duration,
    check: fn() -> Check,
}

fn criteria() -> Vec<Criterion> {
    let secs = Duration::from_secs;
    vec![
        Criterion { number: 1, name: "pipeline overlap", limit: secs(60), check: || Box::pin(pipeline_overlap()) },
        Criterion { number: 2, name: "min-heap balance", limit: secs(5), check: || Box::pin(min_heap_balance()) },
        Criterion { number: 3, name: "task stickiness", limit: secs(30), check: || Box::pin(stickiness()) },
        Criterion { number: 4, name: "checkpoint swap", limit: secs(60), check: || Box::pin(checkpoint_swap_check()) },
        Criterion { number: 5, name: "token fidelity", limit: secs(60), check: || Box::pin(token_fidelity()) },
        Criterion {
            number: 6,
            name: "cancellation and drain",
            limit: secs(120),
            check: || Box::pin(cancel_and_drain()),
        },
        Criterion { number: 7, name: "phase-aware timing", limit: secs(5), check: || Box::pin(phase_timing()) },
        Criterion {
            number: 8,
            name: "async vs batch sampling",
            limit: secs(300),
            check: || Box::pin(dapo_async_vs_batch()),
        },
        Criterion { number: 9, name: "server scaling", limit: secs(300), check: || Box::pin(scaling()) },
        Criterion { number: 10, name: "component ablations", limit: secs(300), check: || Box::pin(ablations()) },
        Criterion { number: 11, name: "cache truth table", limit: secs(1), check: || Box::pin(cache_truth_table()) },
        Criterion {
            number: 12,
            name: "hierarchical assignment",
            limit: secs(5),
            check: || Box::pin(hierarchical_assignment()),
        },
    ]
}

fn main() {
    let only: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
    let mut failed = Vec::new();
    for c in criteria() {
        if !only.is_empty() && !only.contains(&c.number) {
            continue;
        }
        let start = Instant::now();
        let verdict = rt.block_on((c.check)());
        let took = start.elapsed();
        let (ok, detail) = match verdict {
            Ok(d) if took <= c.limit => (true, d),
            Ok(d) => (false, format!("{d}; over the {:?} runtime limit", c.limit)),
            Err(d) => (false, d),
        };
        println!(
            "{} {:>2} {}: {} [{:.1}s / {}s]",
            if ok { "PASS" } else { "FAIL" },
            c.number,
            c.name,
            detail,
            took.as_secs_f64(),
            c.limit.as_secs()
        );
        if !ok {
            failed.push(c.number);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
