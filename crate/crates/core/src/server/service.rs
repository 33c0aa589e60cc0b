use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::sync::{Mutex, Notify, RwLock};
use tracing::info;

use super::config::ServerConfig;
use super::schema::{ProcessRequest, StatusResponse};
use crate::backend::{BackendInfo, LlmRouter, PoolError};
use crate::handler::HandlerRegistry;
use crate::model::{JobId, JobReport, SystemClock};
use crate::pipeline::{
    CancelAck, Counters, DrainReport, Pipeline, PipelineConfig, QueueDepths, SubmitError, SubmitRequest, UnknownJob,
};
use crate::sandbox::{ImageBuilder, ManagerConfig, SandboxError, SandboxManager};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Submit(#[from] SubmitError),
    #[error(transparent)]
    UnknownJob(#[from] UnknownJob),
    #[error("server is already running")]
    AlreadyRunning,
    #[error("server is not running")]
    NotRunning,
}

/// Bound on how long stop waits for blocked /process callers to pick up
/// their results after every job has completed.
const WAITER_FLUSH: Duration = Duration::from_secs(5);

/// Owns the pipeline across start/stop cycles along with the state that
/// outlives it: backends, runtimes, and counters.
#[derive(Debug)]
pub struct RolloutService {
    config: ServerConfig,
    registry: Arc<HandlerRegistry>,
    router: LlmRouter,
    sandbox: SandboxManager,
    counters: Arc<Counters>,
    /// The latest pipeline; kept after stop so late cancels are answered.
    pipeline: RwLock<Option<Arc<Pipeline>>>,
    running: std::sync::atomic::AtomicBool,
    lifecycle: Mutex<()>,
    waiters: AtomicUsize,
    waiters_done: Notify,
}

struct WaiterGuard<'a>(&'a RolloutService);

impl Drop for WaiterGuard<'_> {
    fn drop(&mut self) {
        self.0.waiters.fetch_sub(1, Ordering::SeqCst);
        self.0.waiters_done.notify_waiters();
    }
}

impl RolloutService {
    pub fn new(config: ServerConfig, registry: HandlerRegistry) -> Result<Arc<Self>, SandboxError> {
        let sandbox = SandboxManager::new(ManagerConfig {
            runtime_dir: config.runtime_dir.clone(),
            grace: config.grace(),
            address_capacity: config.address_capacity.unwrap_or(crate::sandbox::allocator::MAX_CAPACITY),
            image_cache: config.cache_root.as_ref().map(|root| ImageBuilder::new(root, config.cache_mode)),
        })?;
        let router = LlmRouter::new(config.policy, config.retry);
        Ok(Arc::new(Self {
            config,
            registry: Arc::new(registry),
            router,
            sandbox,
            counters: Arc::new(Counters::default()),
            pipeline: RwLock::new(None),
            running: Default::default(),
            lifecycle: Mutex::new(()),
            waiters: AtomicUsize::new(0),
            waiters_done: Notify::new(),
        }))
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn router(&self) -> &LlmRouter {
        &self.router
    }

    pub fn sandbox(&self) -> &SandboxManager {
        &self.sandbox
    }

    pub fn is_running(&self) -> bool {
        self.running.load(Ordering::SeqCst)
    }

    pub async fn pipeline(&self) -> Option<Arc<Pipeline>> {
        self.pipeline.read().await.clone()
    }

    pub async fn start(&self) -> Result<(), ServiceError> {
        let _guard = self.lifecycle.lock().await;
        if self.is_running() {
            return Err(ServiceError::AlreadyRunning);
        }
        let pipeline = Pipeline::start(
            PipelineConfig { workers: self.config.workers, grace: self.config.grace(), clock: SystemClock::shared() },
            self.registry.clone(),
            self.router.clone(),
            self.sandbox.clone(),
            self.counters.clone(),
        );
        *self.pipeline.write().await = Some(pipeline);
        self.running.store(true, Ordering::SeqCst);
        info!("rollout service started");
        Ok(())
    }

    /// Drains the pipeline. In-flight /process calls have their CANCELLED
    /// results before this returns.
    pub async fn stop(&self) -> Result<DrainReport, ServiceError> {
        let _guard = self.lifecycle.lock().await;
        if !self.is_running() {
            return Err(ServiceError::NotRunning);
        }
        self.running.store(false, Ordering::SeqCst);
        let pipeline = self.pipeline().await.expect("running implies a pipeline");
        let report = pipeline.drain_and_stop().await;
        let deadline = Instant::now() + WAITER_FLUSH;
        loop {
            let done = self.waiters_done.notified();
            tokio::pin!(done);
            done.as_mut().enable();
            if self.waiters.load(Ordering::SeqCst) == 0 || Instant::now() >= deadline {
                break;
            }
            let _ = tokio::time::timeout_at(deadline.into(), done).await;
        }
        info!(cancelled = report.cancelled, orphans = report.orphans_killed, "rollout service stopped");
        Ok(report)
    }

    fn submit_request(&self, req: ProcessRequest) -> Result<SubmitRequest, ServiceError> {
        let inst = req.instance;
        if inst.task_name.is_empty() {
            return Err(ServiceError::BadRequest("instance.task_name must be nonempty".into()));
        }
        let timeout = match inst.timeout_seconds {
            None => self.config.default_timeout(),
            Some(s) if s.is_finite() && s > 0.0 => Duration::try_from_secs_f64(s)
                .map_err(|_| ServiceError::BadRequest("timeout_seconds out of range".into()))?,
            Some(_) => return Err(ServiceError::BadRequest("timeout_seconds must be positive".into())),
        };
        if inst.job_id.as_deref() == Some("") {
            return Err(ServiceError::BadRequest("job_id must be nonempty".into()));
        }
        Ok(SubmitRequest {
            task_name: inst.task_name,
            instance: inst.payload,
            job_id: inst.job_id.map(JobId::from),
            sampling_params: req.sampling_params,
            timeout,
        })
    }

    /// Submits a job and waits for its final result.
    pub async fn process(&self, req: ProcessRequest) -> Result<JobReport, ServiceError> {
        let submit = self.submit_request(req)?;
        self.waiters.fetch_add(1, Ordering::SeqCst);
        let _waiter = WaiterGuard(self);
        let handle = {
            let pipeline = self.pipeline.read().await;
            match pipeline.as_ref() {
                Some(p) if self.is_running() => p.submit(submit)?,
                _ => return Err(SubmitError::ServerStopped.into()),
            }
        };
        Ok(handle.wait().await.as_ref().clone())
    }

    pub async fn cancel(&self, id: &JobId) -> Result<CancelAck, ServiceError> {
        let pipeline = self.pipeline().await.ok_or_else(|| UnknownJob(id.clone()))?;
        Ok(pipeline.cancel(id).await?)
    }

    pub fn add_backend(&self, address: &str) -> Result<Vec<BackendInfo>, PoolError> {
        self.router.add_backend(address)
    }

    pub fn clear_backends(&self) -> Vec<BackendInfo> {
        self.router.clear_backends()
    }

    pub async fn status(&self) -> StatusResponse {
        let running = self.is_running();
        let (queue_depths, in_flight) = match self.pipeline().await {
            Some(p) => (p.queue_depths(), p.in_flight()),
            None => (QueueDepths { init: 0, run: 0, eval: 0 }, 0),
        };
        StatusResponse {
            running,
            queue_depths,
            in_flight,
            backends: self.router.backends(),
            completed_total: self.counters.completed.load(Ordering::SeqCst),
            failed_total: self.counters.failed.load(Ordering::SeqCst),
            cancelled_total: self.counters.cancelled.load(Ordering::SeqCst),
        }
    }
}
