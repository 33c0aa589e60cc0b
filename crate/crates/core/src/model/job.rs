use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::sync::watch;
use tokio_util::sync::CancellationToken;

use super::clock::SharedClock;
use super::sampling::SamplingParams;
use super::stage::Stage;
use super::timer::{PausableTimer, TimerError};
use super::trajectory::{MalformedTurn, TokenTrajectory, Turn};
use super::TokenId;
use crate::handler::HandlerConfig;
use crate::sandbox::SandboxRuntime;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(String);

impl JobId {
    /// 128 random bits, hex encoded.
    pub fn generate() -> Self {
        let mut bytes = [0u8; 16];
        rand::rng().fill_bytes(&mut bytes);
        Self(bytes.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<String> for JobId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl From<&str> for JobId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JobStatus {
    Pending,
    Init,
    Run,
    Eval,
    Done,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal job transition {from:?} -> {to:?}")]
pub struct TransitionError {
    pub from: JobStatus,
    pub to: JobStatus,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed | JobStatus::Cancelled)
    }

    pub fn can_transition_to(self, to: JobStatus) -> bool {
        use JobStatus::*;
        match (self, to) {
            (from, _) if from.is_terminal() => false,
            (_, Failed | Cancelled) => true,
            (Pending, Init) | (Init, Run) | (Run, Eval) | (Eval, Done) => true,
            _ => false,
        }
    }

    pub fn transition(self, to: JobStatus) -> Result<JobStatus, TransitionError> {
        if self.can_transition_to(to) {
            Ok(to)
        } else {
            Err(TransitionError { from: self, to })
        }
    }
}

impl From<Stage> for JobStatus {
    fn from(s: Stage) -> Self {
        match s {
            Stage::Init => JobStatus::Init,
            Stage::Run => JobStatus::Run,
            Stage::Eval => JobStatus::Eval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobError {
    pub stage: Option<Stage>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JobTimings {
    pub init_seconds: f64,
    pub run_seconds: f64,
    pub eval_seconds: f64,
    pub queue_seconds: f64,
}

/// Serializable final result of a job, whatever stage it ended in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub job_id: JobId,
    pub status: JobStatus,
    pub reward: Option<f64>,
    pub trajectory: Vec<Turn>,
    pub timings: JobTimings,
    pub error: Option<JobError>,
}

/// One-shot event carrying a value. `fire` succeeds exactly once.
#[derive(Debug)]
pub struct CompletionSignal<T> {
    tx: watch::Sender<Option<T>>,
}

impl<T: Clone> CompletionSignal<T> {
    pub fn new() -> Self {
        Self { tx: watch::Sender::new(None) }
    }

    /// Returns true if this call fired the signal.
    pub fn fire(&self, value: T) -> bool {
        let mut value = Some(value);
        self.tx.send_if_modified(|slot| {
            if slot.is_none() {
                *slot = value.take();
                true
            } else {
                false
            }
        })
    }

    pub fn is_fired(&self) -> bool {
        self.tx.borrow().is_some()
    }

    pub fn get(&self) -> Option<T> {
        self.tx.borrow().clone()
    }

    pub async fn wait(&self) -> T {
        let mut rx = self.tx.subscribe();
        let value = rx.wait_for(Option::is_some).await.expect("sender lives as long as the signal");
        value.clone().expect("checked by wait_for")
    }
}

impl<T: Clone> Default for CompletionSignal<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// The parts of a job that other tasks (cancellation, status, HTTP waiters)
/// may touch while a worker owns the job.
#[derive(Debug)]
pub struct JobShared {
    id: JobId,
    task_name: String,
    cancel: CancellationToken,
    runtime: Mutex<Option<Arc<SandboxRuntime>>>,
    trajectory: Mutex<TokenTrajectory>,
    timer: Mutex<PausableTimer>,
    completion: CompletionSignal<Arc<JobReport>>,
    claimed: AtomicBool,
    submitted_at: Duration,
    /// Backend address of each generation call, in call order.
    backend_calls: Mutex<Vec<String>>,
}

pub type JobHandle = Arc<JobShared>;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl JobShared {
    pub fn new(id: JobId, task_name: impl Into<String>, clock: SharedClock) -> Self {
        let submitted_at = clock.now();
        Self {
            id,
            task_name: task_name.into(),
            cancel: CancellationToken::new(),
            runtime: Mutex::new(None),
            trajectory: Mutex::new(TokenTrajectory::new()),
            timer: Mutex::new(PausableTimer::new(clock)),
            completion: CompletionSignal::new(),
            claimed: AtomicBool::new(false),
            submitted_at,
            backend_calls: Mutex::new(Vec::new()),
        }
    }

    pub fn id(&self) -> &JobId {
        &self.id
    }

    pub fn task_name(&self) -> &str {
        &self.task_name
    }

    pub fn cancel_token(&self) -> &CancellationToken {
        &self.cancel
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancel.is_cancelled()
    }

    /// Stores the runtime, unless the job was cancelled first; then the
    /// runtime is handed back so the caller can close it.
    pub fn attach_runtime(&self, rt: Arc<SandboxRuntime>) -> Result<(), Arc<SandboxRuntime>> {
        let mut slot = lock(&self.runtime);
        if self.cancel.is_cancelled() {
            return Err(rt);
        }
        *slot = Some(rt);
        Ok(())
    }

    pub fn runtime(&self) -> Option<Arc<SandboxRuntime>> {
        lock(&self.runtime).clone()
    }

    pub fn take_runtime(&self) -> Option<Arc<SandboxRuntime>> {
        lock(&self.runtime).take()
    }

    pub fn trajectory(&self) -> MutexGuard<'_, TokenTrajectory> {
        lock(&self.trajectory)
    }

    pub fn timer(&self) -> MutexGuard<'_, PausableTimer> {
        lock(&self.timer)
    }

    pub fn record_backend_call(&self, address: &str) {
        lock(&self.backend_calls).push(address.to_string());
    }

    pub fn backend_calls(&self) -> Vec<String> {
        lock(&self.backend_calls).clone()
    }

    /// True once a terminal result is claimed, possibly before waiters wake.
    pub fn is_complete(&self) -> bool {
        self.claimed.load(Ordering::SeqCst) || self.completion.is_fired()
    }

    pub fn outcome(&self) -> Option<Arc<JobReport>> {
        self.completion.get()
    }

    /// Reserves the right to complete the job. Exactly one caller wins, so
    /// terminal bookkeeping can happen before waiters are released.
    pub fn claim_completion(&self) -> bool {
        !self.claimed.swap(true, Ordering::SeqCst)
    }

    /// Fires the completion signal; false if it had already fired.
    pub fn complete(&self, report: JobReport) -> bool {
        self.completion.fire(Arc::new(report))
    }

    pub async fn wait(&self) -> Arc<JobReport> {
        self.completion.wait().await
    }

    pub fn timings(&self) -> JobTimings {
        let timer = self.timer();
        let active = timer.elapsed();
        let wall = timer.clock().now().saturating_sub(self.submitted_at);
        JobTimings {
            init_seconds: timer.stage_elapsed(Stage::Init).as_secs_f64(),
            run_seconds: timer.stage_elapsed(Stage::Run).as_secs_f64(),
            eval_seconds: timer.stage_elapsed(Stage::Eval).as_secs_f64(),
            queue_seconds: wall.saturating_sub(active).as_secs_f64(),
        }
    }

    /// Report built only from shared state, for paths that do not own the job.
    pub fn snapshot_report(&self, status: JobStatus, reward: Option<f64>, error: Option<JobError>) -> JobReport {
        JobReport {
            job_id: self.id.clone(),
            status,
            reward,
            trajectory: self.trajectory().turns().to_vec(),
            timings: self.timings(),
            error,
        }
    }
}

/// A rollout request moving through the pipeline. Owned by one worker at a time.
#[derive(Debug)]
pub struct Job {
    handle: JobHandle,
    pub instance: Value,
    pub sampling_params: SamplingParams,
    pub timeout_budget: Duration,
    pub stage_results: BTreeMap<Stage, Value>,
    pub metadata: Value,
    pub config: Option<HandlerConfig>,
    status: JobStatus,
    reward: Option<f64>,
    error: Option<JobError>,
}

impl Job {
    pub fn new(handle: JobHandle, instance: Value, sampling_params: SamplingParams, timeout_budget: Duration) -> Self {
        Self {
            handle,
            instance,
            sampling_params,
            timeout_budget,
            stage_results: BTreeMap::new(),
            metadata: Value::Null,
            config: None,
            status: JobStatus::Pending,
            reward: None,
            error: None,
        }
    }

    pub fn handle(&self) -> &JobHandle {
        &self.handle
    }

    pub fn id(&self) -> &JobId {
        self.handle.id()
    }

    pub fn task_name(&self) -> &str {
        self.handle.task_name()
    }

    pub fn status(&self) -> JobStatus {
        self.status
    }

    pub fn reward(&self) -> Option<f64> {
        self.reward
    }

    pub fn error(&self) -> Option<&JobError> {
        self.error.as_ref()
    }

    pub fn advance(&mut self, to: JobStatus) -> Result<(), TransitionError> {
        self.status = self.status.transition(to)?;
        Ok(())
    }

    /// Moves to a terminal state. Reward is kept only for DONE and FAILED.
    pub fn finish(
        &mut self,
        to: JobStatus,
        reward: Option<f64>,
        error: Option<JobError>,
    ) -> Result<(), TransitionError> {
        debug_assert!(to.is_terminal());
        self.status = self.status.transition(to)?;
        self.reward = match to {
            JobStatus::Done | JobStatus::Failed => reward,
            _ => None,
        };
        self.error = error;
        Ok(())
    }

    pub fn append_turn(&self, turn: Turn) -> Result<(), MalformedTurn> {
        self.handle.trajectory().append(turn)
    }

    pub fn prompt_ids(&self) -> Vec<TokenId> {
        self.handle.trajectory().flatten()
    }

    pub fn trajectory_snapshot(&self) -> TokenTrajectory {
        self.handle.trajectory().clone()
    }

    pub fn enter_phase(&self, stage: Stage) -> Result<(), TimerError> {
        self.handle.timer().enter_phase(stage)
    }

    pub fn exit_phase(&self) -> Result<(Stage, Duration), TimerError> {
        self.handle.timer().exit_phase()
    }

    pub fn elapsed(&self) -> Duration {
        self.handle.timer().elapsed()
    }

    pub fn expired(&self) -> bool {
        self.handle.timer().expired(self.timeout_budget)
    }

    pub fn remaining(&self) -> Duration {
        self.handle.timer().remaining(self.timeout_budget)
    }

    pub fn runtime(&self) -> Option<Arc<SandboxRuntime>> {
        self.handle.runtime()
    }

    pub fn cancel_token(&self) -> &CancellationToken {
        self.handle.cancel_token()
    }

    pub fn report(&self) -> JobReport {
        self.handle.snapshot_report(self.status, self.reward, self.error.clone())
    }
}
