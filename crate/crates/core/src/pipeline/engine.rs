use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;
use tracing::{debug, info};

use super::queue::{JobTicket, StageQueue};
use super::stage::{close_runtime, execute_stage, StageOutcome};
use crate::backend::LlmRouter;
use crate::handler::{HandlerRegistry, StageContext};
use crate::model::{
    Job, JobHandle, JobId, JobReport, JobShared, JobStatus, SamplingParams, SharedClock, Stage, SystemClock,
};
use crate::sandbox::{SandboxManager, DEFAULT_GRACE};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerPoolConfig {
    pub init: usize,
    pub run: usize,
    pub eval: usize,
}

impl Default for WorkerPoolConfig {
    fn default() -> Self {
        Self { init: 8, run: 16, eval: 8 }
    }
}

impl WorkerPoolConfig {
    pub fn uniform(n: usize) -> Self {
        Self { init: n, run: n, eval: n }
    }

    pub fn get(&self, stage: Stage) -> usize {
        match stage {
            Stage::Init => self.init,
            Stage::Run => self.run,
            Stage::Eval => self.eval,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub workers: WorkerPoolConfig,
    pub grace: Duration,
    pub clock: SharedClock,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { workers: WorkerPoolConfig::default(), grace: DEFAULT_GRACE, clock: SystemClock::shared() }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SubmitError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("job id {0} is already in use")]
    DuplicateJob(JobId),
    #[error("invalid sampling params: {0}")]
    InvalidParams(String),
    #[error("server is stopped")]
    ServerStopped,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown job {0}")]
pub struct UnknownJob(pub JobId);

#[derive(Debug, Clone)]
pub struct SubmitRequest {
    pub task_name: String,
    pub instance: Value,
    pub job_id: Option<JobId>,
    pub sampling_params: SamplingParams,
    pub timeout: Duration,
}

impl SubmitRequest {
    pub fn new(task_name: impl Into<String>, instance: Value) -> Self {
        Self {
            task_name: task_name.into(),
            instance,
            job_id: None,
            sampling_params: SamplingParams::default(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_id(mut self, id: impl Into<JobId>) -> Self {
        self.job_id = Some(id.into());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_params(mut self, params: SamplingParams) -> Self {
        self.sampling_params = params;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CancelAck {
    /// False when the job had already finished; nothing was done.
    pub took_effect: bool,
}

/// Terminal-state totals. Shared across pipeline restarts.
#[derive(Debug, Default)]
pub struct Counters {
    pub completed: AtomicU64,
    pub failed: AtomicU64,
    pub cancelled: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueDepths {
    pub init: usize,
    pub run: usize,
    pub eval: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrainReport {
    pub cancelled: usize,
    pub orphans_killed: usize,
}

#[derive(Debug)]
enum Entry {
    Live(JobHandle),
    Finished(JobStatus),
}

#[derive(Debug)]
struct JobTable {
    accepting: bool,
    jobs: HashMap<JobId, Entry>,
}

#[derive(Debug)]
struct Inner {
    registry: Arc<HandlerRegistry>,
    router: LlmRouter,
    sandbox: SandboxManager,
    ctx: StageContext,
    config: PipelineConfig,
    queues: [StageQueue; 3],
    table: Mutex<JobTable>,
    discarded: Mutex<HashSet<JobId>>,
    counters: Arc<Counters>,
    in_flight: AtomicUsize,
    shutdown: CancellationToken,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// The three-stage rollout engine: per-stage queues drained by independent
/// worker pools.
#[derive(Debug)]
pub struct Pipeline {
    inner: Arc<Inner>,
    workers: tokio::sync::Mutex<Vec<JoinHandle<()>>>,
}

impl Pipeline {
    /// Spawns the worker pools; must be called within a tokio runtime.
    pub fn start(
        config: PipelineConfig,
        registry: Arc<HandlerRegistry>,
        router: LlmRouter,
        sandbox: SandboxManager,
        counters: Arc<Counters>,
    ) -> Arc<Self> {
        let inner = Arc::new(Inner {
            ctx: StageContext::new(router.clone(), sandbox.clone()),
            registry,
            router,
            sandbox,
            config,
            queues: Default::default(),
            table: Mutex::new(JobTable { accepting: true, jobs: HashMap::new() }),
            discarded: Mutex::new(HashSet::new()),
            counters,
            in_flight: AtomicUsize::new(0),
            shutdown: CancellationToken::new(),
        });
        let mut workers = Vec::new();
        for stage in Stage::ALL {
            for _ in 0..inner.config.workers.get(stage).max(1) {
                let inner = inner.clone();
                workers.push(tokio::spawn(async move { inner.worker_loop(stage).await }));
            }
        }
        Arc::new(Self { inner, workers: tokio::sync::Mutex::new(workers) })
    }

    pub fn router(&self) -> &LlmRouter {
        &self.inner.router
    }

    pub fn sandbox(&self) -> &SandboxManager {
        &self.inner.sandbox
    }

    pub fn counters(&self) -> &Arc<Counters> {
        &self.inner.counters
    }

    pub fn is_accepting(&self) -> bool {
        lock(&self.inner.table).accepting
    }

    pub fn in_flight(&self) -> usize {
        self.inner.in_flight.load(Ordering::SeqCst)
    }

    pub fn queue_depths(&self) -> QueueDepths {
        let q = &self.inner.queues;
        QueueDepths { init: q[0].len(), run: q[1].len(), eval: q[2].len() }
    }

    pub fn job(&self, id: &JobId) -> Option<JobHandle> {
        match lock(&self.inner.table).jobs.get(id) {
            Some(Entry::Live(h)) => Some(h.clone()),
            _ => None,
        }
    }

    /// Terminal status of a finished job; None while live or if unknown.
    pub fn job_status(&self, id: &JobId) -> Option<JobStatus> {
        match lock(&self.inner.table).jobs.get(id)? {
            Entry::Live(_) => None,
            Entry::Finished(s) => Some(*s),
        }
    }

    pub fn is_discarded(&self, id: &JobId) -> bool {
        lock(&self.inner.discarded).contains(id)
    }

    /// Enqueues a job on INIT and returns its handle for awaiting the result.
    pub fn submit(&self, req: SubmitRequest) -> Result<JobHandle, SubmitError> {
        let inner = &self.inner;
        req.sampling_params.validate().map_err(|e| SubmitError::InvalidParams(e.to_string()))?;
        let mut table = lock(&inner.table);
        if !table.accepting {
            return Err(SubmitError::ServerStopped);
        }
        let handler =
            inner.registry.dispatch(&req.task_name).map_err(|_| SubmitError::UnknownTask(req.task_name.clone()))?;
        let id = match req.job_id {
            Some(id) if table.jobs.contains_key(&id) => return Err(SubmitError::DuplicateJob(id)),
            Some(id) => id,
            None => loop {
                let id = JobId::generate();
                if !table.jobs.contains_key(&id) {
                    break id;
                }
            },
        };
        let handle = Arc::new(JobShared::new(id.clone(), req.task_name, inner.config.clock.clone()));
        let job = Job::new(handle.clone(), req.instance, req.sampling_params, req.timeout);
        table.jobs.insert(id, Entry::Live(handle.clone()));
        inner.in_flight.fetch_add(1, Ordering::SeqCst);
        inner.queues[Stage::Init.index()].push(JobTicket { job, handler });
        Ok(handle)
    }

    /// Discards the job, interrupts its current stage, closes its runtime
    /// and releases any waiter with a CANCELLED result.
    pub async fn cancel(&self, id: &JobId) -> Result<CancelAck, UnknownJob> {
        self.inner.cancel(id).await
    }

    /// Stops accepting work, cancels everything in flight, stops the
    /// workers and removes every runtime and stray process.
    pub async fn drain_and_stop(&self) -> DrainReport {
        let inner = &self.inner;
        let live: Vec<JobId> = {
            let mut table = lock(&inner.table);
            table.accepting = false;
            table
                .jobs
                .iter()
                .filter_map(|(id, e)| match e {
                    Entry::Live(_) => Some(id.clone()),
                    Entry::Finished(_) => None,
                })
                .collect()
        };
        info!(jobs = live.len(), "draining pipeline");
        let mut cancels = tokio::task::JoinSet::new();
        for id in live {
            let inner = inner.clone();
            cancels.spawn(async move { inner.cancel(&id).await.is_ok_and(|a| a.took_effect) });
        }
        let mut cancelled = 0;
        while let Some(r) = cancels.join_next().await {
            cancelled += usize::from(r.unwrap_or(false));
        }
        inner.shutdown.cancel();
        let workers = std::mem::take(&mut *self.workers.lock().await);
        for w in workers {
            let _ = w.await;
        }
        for queue in &inner.queues {
            for ticket in queue.drain() {
                inner.finish_cancelled(ticket).await;
            }
        }
        inner.sandbox.close_all(inner.config.grace).await;
        let orphans_killed = inner.sandbox.kill_orphans();
        DrainReport { cancelled, orphans_killed }
    }
}

impl Inner {
    fn is_discarded(&self, id: &JobId) -> bool {
        lock(&self.discarded).contains(id)
    }

    async fn worker_loop(self: Arc<Self>, stage: Stage) {
        let queue = &self.queues[stage.index()];
        while let Some(ticket) = queue.pop(&self.shutdown).await {
            self.process(stage, ticket).await;
        }
        debug!(%stage, "worker exiting");
    }

    async fn process(&self, stage: Stage, ticket: JobTicket) {
        let JobTicket { mut job, mut handler } = ticket;
        let id = job.id().clone();
        let outcome =
            execute_stage(handler.as_mut(), stage, &mut job, &self.ctx, self.config.grace, || self.is_discarded(&id))
                .await;
        match outcome {
            StageOutcome::Next(next) => {
                self.queues[next.index()].push(JobTicket { job, handler });
            }
            StageOutcome::Done(reward) => {
                let _ = job.finish(JobStatus::Done, Some(reward), None);
                self.finalize(job.handle(), handler.final_result(&job));
            }
            StageOutcome::Failed { reward, error } => {
                close_runtime(&job, self.config.grace).await;
                debug!(job = %id, %stage, error = %error.message, "stage failed");
                let _ = job.finish(JobStatus::Failed, Some(reward), Some(error));
                self.finalize(job.handle(), handler.final_result(&job));
            }
            StageOutcome::Cancelled => self.finish_cancelled(JobTicket { job, handler }).await,
        }
    }

    async fn finish_cancelled(&self, ticket: JobTicket) {
        let JobTicket { mut job, handler } = ticket;
        close_runtime(&job, self.config.grace).await;
        if !job.status().is_terminal() {
            let _ = job.finish(JobStatus::Cancelled, None, None);
        }
        self.finalize(job.handle(), handler.final_result(&job));
    }

    /// Fires the completion once and does the terminal bookkeeping.
    fn finalize(&self, handle: &JobHandle, report: JobReport) -> bool {
        let status = report.status;
        if !handle.claim_completion() {
            return false;
        }
        let counter = match status {
            JobStatus::Done => &self.counters.completed,
            JobStatus::Failed => &self.counters.failed,
            _ => &self.counters.cancelled,
        };
        counter.fetch_add(1, Ordering::SeqCst);
        self.router.release(handle.id().as_str());
        lock(&self.table).jobs.insert(handle.id().clone(), Entry::Finished(status));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        handle.complete(report);
        true
    }

    async fn cancel(&self, id: &JobId) -> Result<CancelAck, UnknownJob> {
        let handle = match lock(&self.table).jobs.get(id) {
            None => return Err(UnknownJob(id.clone())),
            Some(Entry::Finished(_)) => return Ok(CancelAck { took_effect: false }),
            Some(Entry::Live(h)) => h.clone(),
        };
        if handle.is_complete() {
            return Ok(CancelAck { took_effect: false });
        }
        // The first cancel of a live job takes effect even if the worker,
        // woken by the token, finalizes before we do.
        let took_effect = lock(&self.discarded).insert(id.clone());
        handle.cancel_token().cancel();
        if let Some(rt) = handle.take_runtime() {
            rt.close(self.config.grace).await;
        }
        self.finalize(&handle, handle.snapshot_report(JobStatus::Cancelled, None, None));
        Ok(CancelAck { took_effect })
    }
}
