use std::sync::Arc;
use std::time::Duration;

use crate::backend::{Generation, LlmRouter};
use crate::model::{codec, Job, Turn};
use crate::sandbox::{ActionRequest, ActionResult, RuntimeSpec, SandboxError, SandboxManager, SandboxRuntime};

use super::HandlerError;

/// Services a handler may use while it owns a job. Every call observes the
/// job's cancellation token and, after returning, its timeout budget.
#[derive(Debug, Clone)]
pub struct StageContext {
    router: LlmRouter,
    sandbox: SandboxManager,
}

impl StageContext {
    pub fn new(router: LlmRouter, sandbox: SandboxManager) -> Self {
        Self { router, sandbox }
    }

    pub fn router(&self) -> &LlmRouter {
        &self.router
    }

    pub fn sandbox(&self) -> &SandboxManager {
        &self.sandbox
    }

    fn checkpoint(job: &Job) -> Result<(), HandlerError> {
        if job.cancel_token().is_cancelled() {
            return Err(HandlerError::Cancelled);
        }
        if job.expired() {
            return Err(HandlerError::TimedOut);
        }
        Ok(())
    }

    /// Generates from the flattened trajectory and appends the assistant
    /// turn exactly as returned.
    pub async fn generate_turn(&self, job: &Job) -> Result<Generation, HandlerError> {
        Self::checkpoint(job)?;
        let prompt = job.prompt_ids();
        let generation =
            self.router.generate(job.id().as_str(), &prompt, &job.sampling_params, job.cancel_token()).await?;
        job.handle().record_backend_call(&generation.backend);
        let text = codec::decode(&generation.output_ids);
        job.append_turn(Turn::generated(generation.output_ids.clone(), generation.logprobs.clone(), text))?;
        Self::checkpoint(job)?;
        Ok(generation)
    }

    /// Starts a runtime and attaches it to the job at once, so a concurrent
    /// cancel can close it.
    pub async fn start_runtime(&self, job: &Job, spec: RuntimeSpec) -> Result<Arc<SandboxRuntime>, HandlerError> {
        Self::checkpoint(job)?;
        let rt = tokio::select! {
            _ = job.cancel_token().cancelled() => return Err(HandlerError::Cancelled),
            rt = self.sandbox.start(spec) => rt?,
        };
        if let Err(rt) = job.handle().attach_runtime(rt.clone()) {
            rt.close(self.sandbox.grace()).await;
            return Err(HandlerError::Cancelled);
        }
        Ok(rt)
    }

    pub async fn execute(&self, job: &Job, req: ActionRequest) -> Result<ActionResult, HandlerError> {
        Self::checkpoint(job)?;
        let rt = job.runtime().ok_or(HandlerError::Sandbox(SandboxError::RuntimeClosed))?;
        let result = tokio::select! {
            _ = job.cancel_token().cancelled() => return Err(HandlerError::Cancelled),
            r = rt.execute(req) => r,
        };
        let result = match result {
            Err(SandboxError::RuntimeClosed) if job.cancel_token().is_cancelled() => Err(HandlerError::Cancelled),
            other => other.map_err(HandlerError::from),
        }?;
        Self::checkpoint(job)?;
        Ok(result)
    }

    /// Sleeps unless the job is cancelled first.
    pub async fn sleep(&self, job: &Job, d: Duration) -> Result<(), HandlerError> {
        tokio::select! {
            _ = job.cancel_token().cancelled() => Err(HandlerError::Cancelled),
            _ = tokio::time::sleep(d) => Ok(()),
        }
    }
}
