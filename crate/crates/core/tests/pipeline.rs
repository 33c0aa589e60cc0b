use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use rollout_core::backend::{LlmRouter, RetryConfig, SelectionPolicy};
use rollout_core::handler::{
    AgentHandler, EvalOutput, HandlerConfig, HandlerError, HandlerRegistry, InitOutput, StageContext,
};
use rollout_core::mock_llm::{hash_generate, MockPolicy, MockServer};
use rollout_core::pipeline::{
    run_serial, Counters, Pipeline, PipelineConfig, SubmitError, SubmitRequest, WorkerPoolConfig,
};
use rollout_core::sandbox::{RuntimeSpec, RuntimeState, SandboxManager};
use rollout_core::{Job, JobId, JobStatus, SamplingParams, Stage, SystemClock};

const GRACE: Duration = Duration::from_millis(300);

fn start(registry: HandlerRegistry, workers: WorkerPoolConfig) -> Arc<Pipeline> {
    let config = PipelineConfig { workers, grace: GRACE, clock: SystemClock::shared() };
    let router = LlmRouter::new(SelectionPolicy::default(), RetryConfig::default());
    let sandbox = SandboxManager::with_defaults().unwrap();
    Pipeline::start(config, Arc::new(registry), router, sandbox, Arc::new(Counters::default()))
}

fn builtins(workers: usize) -> Arc<Pipeline> {
    start(HandlerRegistry::with_builtins(), WorkerPoolConfig::uniform(workers))
}

fn sleepy(spec: Value) -> SubmitRequest {
    SubmitRequest::new("sleepy", spec)
}

#[tokio::test]
async fn sleepy_jobs_run_to_done() {
    let p = builtins(2);
    let handles: Vec<_> =
        (0..6).map(|i| p.submit(sleepy(json!({"run_ms": 20, "reward": i as f64}))).unwrap()).collect();
    for (i, h) in handles.iter().enumerate() {
        let r = h.wait().await;
        assert_eq!(r.status, JobStatus::Done);
        assert_eq!(r.reward, Some(i as f64));
        assert!(r.timings.run_seconds >= 0.019);
    }
    assert_eq!(p.in_flight(), 0);
    assert_eq!(p.job_status(handles[0].id()), Some(JobStatus::Done));
    let c = p.counters();
    assert_eq!(c.completed.load(std::sync::atomic::Ordering::SeqCst), 6);
    p.drain_and_stop().await;
}

#[tokio::test]
async fn echo_trajectory_matches_backend_output() {
    let mock = MockServer::spawn_local(MockPolicy::hash(11)).await.unwrap();
    let p = builtins(2);
    p.router().add_backend(&mock.base_url()).unwrap();
    let params = SamplingParams { max_tokens: 8, ..SamplingParams::default() };
    let h = p
        .submit(SubmitRequest::new("echo", json!({"prompt_text": "hello", "turns": 2})).with_params(params.clone()))
        .unwrap();
    let r = h.wait().await;
    assert_eq!(r.status, JobStatus::Done, "{r:?}");
    // user, assistant, user, assistant
    assert_eq!(r.trajectory.len(), 4);
    for k in [1, 3] {
        let prompt = rollout_core::model::trajectory::flatten_turns(&r.trajectory[..k]);
        let expect = hash_generate(11, 512, &prompt, &params);
        assert_eq!(r.trajectory[k].output_ids, expect.output_ids);
        assert_eq!(r.trajectory[k].logprobs, expect.logprobs);
    }
    p.drain_and_stop().await;
}

/// Records the order of lifecycle calls and what INIT's runtime looks like
/// once EVAL runs.
#[derive(Default)]
struct Recorder {
    log: Arc<Mutex<Vec<String>>>,
    runtime: Option<Arc<rollout_core::sandbox::SandboxRuntime>>,
}

#[async_trait]
impl AgentHandler for Recorder {
    async fn init(&mut self, job: &mut Job, ctx: &StageContext) -> Result<InitOutput, HandlerError> {
        self.log.lock().unwrap().push("init".into());
        let rt = ctx.start_runtime(job, RuntimeSpec::default()).await?;
        self.runtime = Some(rt.clone());
        Ok(InitOutput { runtime: Some(rt), metadata: Value::Null, config: HandlerConfig::default() })
    }

    async fn run(&mut self, job: &mut Job, _ctx: &StageContext) -> Result<Value, HandlerError> {
        let attached = job.runtime().is_some();
        self.log.lock().unwrap().push(format!("run attached={attached}"));
        Ok(Value::Null)
    }

    async fn eval(&mut self, job: &mut Job, _ctx: &StageContext) -> Result<EvalOutput, HandlerError> {
        let state = self.runtime.as_ref().map(|rt| rt.state());
        self.log.lock().unwrap().push(format!("eval attached={} state={state:?}", job.runtime().is_some()));
        Ok(EvalOutput { reward: 1.0, details: Value::Null })
    }
}

#[tokio::test]
async fn stages_run_in_order_and_runtime_closes_before_eval() {
    let log = Arc::new(Mutex::new(Vec::new()));
    let mut reg = HandlerRegistry::new();
    let l = log.clone();
    reg.register_fn("recorder", move || Box::new(Recorder { log: l.clone(), runtime: None })).unwrap();
    let p = start(reg, WorkerPoolConfig::uniform(1));
    let r = p.submit(SubmitRequest::new("recorder", Value::Null)).unwrap().wait().await;
    assert_eq!(r.status, JobStatus::Done);
    assert_eq!(
        *log.lock().unwrap(),
        vec!["init", "run attached=true", &format!("eval attached=false state={:?}", Some(RuntimeState::Closed))]
    );
    assert_eq!(p.sandbox().live_count(), 0);
    p.drain_and_stop().await;
}

#[tokio::test]
async fn injected_failures_report_failed_with_stage() {
    let p = builtins(2);
    for stage in Stage::ALL {
        let spec = json!({"sandbox": true, "fail_stage": stage, "reward": 5.0});
        let r = p.submit(sleepy(spec)).unwrap().wait().await;
        assert_eq!(r.status, JobStatus::Failed);
        assert_eq!(r.reward, Some(0.0), "fallback reward");
        let err = r.error.clone().unwrap();
        assert_eq!(err.stage, Some(stage));
        assert!(err.message.contains("injected"), "{}", err.message);
    }
    let bad = p.submit(sleepy(json!({"bogus": 1}))).unwrap().wait().await;
    assert_eq!(bad.status, JobStatus::Failed);
    assert_eq!(bad.error.as_ref().unwrap().stage, Some(Stage::Init));
    assert_eq!(p.sandbox().live_count(), 0);
    assert!(p.sandbox().orphan_census().is_empty());
    p.drain_and_stop().await;
}

#[tokio::test]
async fn budget_overrun_fails_the_stage() {
    let p = builtins(1);
    let req = sleepy(json!({"run_ms": 5_000})).with_timeout(Duration::from_millis(200));
    let t = Instant::now();
    let r = p.submit(req).unwrap().wait().await;
    assert!(t.elapsed() < Duration::from_secs(2));
    assert_eq!(r.status, JobStatus::Failed);
    let err = r.error.clone().unwrap();
    assert_eq!(err.stage, Some(Stage::Run));
    assert!(err.message.contains("timeout"), "{}", err.message);
    p.drain_and_stop().await;
}

#[tokio::test]
async fn queue_wait_does_not_count_toward_budget() {
    // One RUN worker, 4 jobs of 150ms each, 250ms budget. The last job waits
    // ~450ms in the RUN queue yet must not time out.
    let p = builtins(1);
    let handles: Vec<_> = (0..4)
        .map(|_| p.submit(sleepy(json!({"run_ms": 150})).with_timeout(Duration::from_millis(250))).unwrap())
        .collect();
    for h in &handles {
        let r = h.wait().await;
        assert_eq!(r.status, JobStatus::Done, "{:?}", r.error);
    }
    let last = handles.last().unwrap().wait().await;
    assert!(last.timings.queue_seconds > 0.3, "{:?}", last.timings);
    assert!(last.timings.run_seconds < 0.25);
    p.drain_and_stop().await;
}

#[tokio::test]
async fn cancel_mid_run_returns_promptly_and_cleans_up() {
    let p = builtins(2);
    let h = p.submit(sleepy(json!({"run_ms": 20_000, "shell": true}))).unwrap();
    let id = h.id().clone();
    let t0 = Instant::now();
    while p.job(&id).and_then(|j| j.runtime()).is_none() || t0.elapsed() < Duration::from_millis(300) {
        assert!(t0.elapsed() < Duration::from_secs(10), "job never reached RUN");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let t = Instant::now();
    let ack = p.cancel(&id).await.unwrap();
    assert!(ack.took_effect, "{:?}", h.outcome());
    let r = h.wait().await;
    assert!(t.elapsed() < Duration::from_secs(2) + GRACE);
    assert_eq!(r.status, JobStatus::Cancelled);
    assert!(p.is_discarded(&id));
    assert_eq!(p.job_status(&id), Some(JobStatus::Cancelled));
    // A second cancel is a no-op.
    assert!(!p.cancel(&id).await.unwrap().took_effect);
    assert!(p.cancel(&JobId::from("nope")).await.is_err());
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert_eq!(p.sandbox().live_count(), 0);
    assert!(p.sandbox().orphan_census().is_empty());
    assert_eq!(p.sandbox().allocator().live_count(), 0);
    p.drain_and_stop().await;
}

#[tokio::test]
async fn cancel_while_queued_never_runs_the_job() {
    let p = builtins(1);
    let blocker = p.submit(sleepy(json!({"init_ms": 300}))).unwrap();
    let queued = p.submit(sleepy(json!({}))).unwrap();
    p.cancel(queued.id()).await.unwrap();
    let r = queued.wait().await;
    assert_eq!(r.status, JobStatus::Cancelled);
    assert!(r.timings.init_seconds == 0.0);
    assert_eq!(blocker.wait().await.status, JobStatus::Done);
    p.drain_and_stop().await;
}

#[tokio::test]
async fn submit_validation() {
    let p = builtins(1);
    assert!(matches!(p.submit(SubmitRequest::new("nope", Value::Null)), Err(SubmitError::UnknownTask(_))));
    let bad = SamplingParams { top_p: 0.0, ..SamplingParams::default() };
    assert!(matches!(p.submit(sleepy(json!({})).with_params(bad)), Err(SubmitError::InvalidParams(_))));
    p.submit(sleepy(json!({})).with_id("dup")).unwrap().wait().await;
    assert!(matches!(p.submit(sleepy(json!({})).with_id("dup")), Err(SubmitError::DuplicateJob(_))));
    p.drain_and_stop().await;
}

#[tokio::test]
async fn drain_cancels_in_flight_and_refuses_new_work() {
    let p = builtins(2);
    let handles: Vec<_> = (0..5)
        .map(|i| {
            let spec = if i % 2 == 0 { json!({"run_ms": 30_000, "shell": true}) } else { json!({"init_ms": 30_000}) };
            p.submit(sleepy(spec)).unwrap()
        })
        .collect();
    tokio::time::sleep(Duration::from_millis(500)).await;
    let t = Instant::now();
    let report = p.drain_and_stop().await;
    assert!(t.elapsed() < Duration::from_secs(5));
    assert_eq!(report.cancelled, 5);
    for h in &handles {
        assert_eq!(h.wait().await.status, JobStatus::Cancelled);
    }
    assert!(matches!(p.submit(sleepy(json!({}))), Err(SubmitError::ServerStopped)));
    assert_eq!(p.in_flight(), 0);
    assert_eq!(p.sandbox().live_count(), 0);
    assert!(p.sandbox().orphan_census().is_empty());
    assert_eq!(p.sandbox().allocator().live_count(), 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn racing_submit_and_stop_loses_nothing() {
    for _ in 0..5 {
        let p = builtins(2);
        let submitter = {
            let p = p.clone();
            tokio::spawn(async move {
                let mut accepted = Vec::new();
                for _ in 0..200 {
                    match p.submit(sleepy(json!({"run_ms": 5}))) {
                        Ok(h) => accepted.push(h),
                        Err(SubmitError::ServerStopped) => break,
                        Err(e) => panic!("{e}"),
                    }
                    tokio::task::yield_now().await;
                }
                accepted
            })
        };
        tokio::time::sleep(Duration::from_millis(5)).await;
        p.drain_and_stop().await;
        let accepted = submitter.await.unwrap();
        for h in accepted {
            let r = tokio::time::timeout(Duration::from_secs(5), h.wait()).await.expect("job lost");
            assert!(r.status.is_terminal());
        }
        assert_eq!(p.in_flight(), 0);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn random_cancel_fuzz_every_job_resolves_once() {
    let p = builtins(4);
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    let mut handles = Vec::new();
    for i in 0..120 {
        let sandbox = rng.random_bool(0.2);
        let spec = json!({
            "init_ms": rng.random_range(0..20),
            "run_ms": rng.random_range(0..60),
            "sandbox": sandbox,
            "fail_stage": if rng.random_bool(0.1) { json!("EVAL") } else { Value::Null },
        });
        handles.push(p.submit(sleepy(spec).with_id(format!("j{i}"))).unwrap());
    }
    let mut cancels = Vec::new();
    for _ in 0..40 {
        let id = JobId::from(format!("j{}", rng.random_range(0..120)));
        let delay = Duration::from_millis(rng.random_range(0..200));
        let p = p.clone();
        cancels.push(tokio::spawn(async move {
            tokio::time::sleep(delay).await;
            p.cancel(&id).await.unwrap();
        }));
    }
    for c in cancels {
        c.await.unwrap();
    }
    let mut counts = [0usize; 3];
    for h in &handles {
        let r = tokio::time::timeout(Duration::from_secs(20), h.wait()).await.expect("job never resolved");
        match r.status {
            JobStatus::Done => counts[0] += 1,
            JobStatus::Failed => counts[1] += 1,
            JobStatus::Cancelled => counts[2] += 1,
            other => panic!("non-terminal {other:?}"),
        }
    }
    let c = p.counters();
    use std::sync::atomic::Ordering::SeqCst;
    assert_eq!(
        [c.completed.load(SeqCst), c.failed.load(SeqCst), c.cancelled.load(SeqCst)],
        [counts[0] as u64, counts[1] as u64, counts[2] as u64]
    );
    p.drain_and_stop().await;
    assert!(p.sandbox().orphan_census().is_empty());
    assert_eq!(p.sandbox().allocator().live_count(), 0);
}

#[tokio::test]
async fn pipelining_overlaps_stages() {
    let spec = json!({"init_ms": 100, "run_ms": 100, "eval_ms": 100});
    let p = builtins(1);
    let t = Instant::now();
    let handles: Vec<_> = (0..6).map(|_| p.submit(sleepy(spec.clone())).unwrap()).collect();
    for h in handles {
        assert_eq!(h.wait().await.status, JobStatus::Done);
    }
    let pipelined = t.elapsed();
    p.drain_and_stop().await;

    let reg = HandlerRegistry::with_builtins();
    let ctx = StageContext::new(
        LlmRouter::new(SelectionPolicy::default(), RetryConfig::default()),
        SandboxManager::with_defaults().unwrap(),
    );
    let t = Instant::now();
    let reports = run_serial(&reg, &ctx, SystemClock::shared(), GRACE, (0..6).map(|_| sleepy(spec.clone())).collect())
        .await
        .unwrap();
    let serial = t.elapsed();
    assert!(reports.iter().all(|r| r.status == JobStatus::Done));
    // (n + stages - 1) * d = 800ms against n * stages * d = 1800ms
    assert!(pipelined < Duration::from_millis(1100), "{pipelined:?}");
    assert!(serial >= Duration::from_millis(1800));
}

#[tokio::test]
async fn bottleneck_stage_sets_throughput() {
    // RUN is 4x slower than the others; 4 RUN workers restore balance.
    let spec = json!({"init_ms": 25, "run_ms": 100, "eval_ms": 25});
    let run = |workers| {
        let spec = spec.clone();
        async move {
            let p = builtins(1);
            drop(p);
            let p = start(HandlerRegistry::with_builtins(), workers);
            let t = Instant::now();
            let hs: Vec<_> = (0..12).map(|_| p.submit(sleepy(spec.clone())).unwrap()).collect();
            for h in hs {
                h.wait().await;
            }
            p.drain_and_stop().await;
            t.elapsed()
        }
    };
    let narrow = run(WorkerPoolConfig::uniform(1)).await;
    let wide = run(WorkerPoolConfig { init: 1, run: 4, eval: 1 }).await;
    assert!(narrow >= Duration::from_millis(1200), "{narrow:?}");
    assert!(wide * 2 < narrow, "{wide:?} vs {narrow:?}");
}
