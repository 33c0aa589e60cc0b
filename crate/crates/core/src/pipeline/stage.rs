//! Running one stage of one job, shared by the pipelined and serial engines.

use std::time::Duration;

use serde_json::{json, Value};

use crate::handler::{stage_exception, AgentHandler, EvalOutput, HandlerError, InitOutput, StageContext};
use crate::model::{Job, JobError, JobStatus, Stage};

pub(crate) enum StageOk {
    Init(InitOutput),
    Run(Value),
    Eval(EvalOutput),
}

pub(crate) enum StageOutcome {
    /// Move on to the given stage.
    Next(Stage),
    Done(f64),
    Failed {
        reward: f64,
        error: JobError,
    },
    Cancelled,
}

async fn invoke(
    handler: &mut dyn AgentHandler,
    stage: Stage,
    job: &mut Job,
    ctx: &StageContext,
) -> Result<StageOk, HandlerError> {
    match stage {
        Stage::Init => handler.init(job, ctx).await.map(StageOk::Init),
        Stage::Run => handler.run(job, ctx).await.map(StageOk::Run),
        Stage::Eval => handler.eval(job, ctx).await.map(StageOk::Eval),
    }
}

fn fail(handler: &mut dyn AgentHandler, stage: Stage, job: &mut Job, err: &HandlerError) -> StageOutcome {
    let fallback = stage_exception(handler, stage, job, err);
    let reward = fallback.get("reward").and_then(Value::as_f64).unwrap_or(0.0);
    job.stage_results.insert(stage, fallback);
    StageOutcome::Failed { reward, error: JobError { stage: Some(stage), message: err.to_string() } }
}

pub(crate) async fn close_runtime(job: &Job, grace: Duration) {
    if let Some(rt) = job.handle().take_runtime() {
        rt.close(grace).await;
    }
}

/// Runs `stage` with its timer phase active. `is_discarded` is consulted
/// right before the handler is invoked.
pub(crate) async fn execute_stage(
    handler: &mut dyn AgentHandler,
    stage: Stage,
    job: &mut Job,
    ctx: &StageContext,
    grace: Duration,
    is_discarded: impl Fn() -> bool,
) -> StageOutcome {
    if job.cancel_token().is_cancelled() || is_discarded() {
        return StageOutcome::Cancelled;
    }
    if job.expired() {
        return fail(handler, stage, job, &HandlerError::TimedOut);
    }
    if job.advance(JobStatus::from(stage)).is_err() {
        return StageOutcome::Cancelled;
    }
    job.enter_phase(stage).expect("no phase is active between stages");
    if is_discarded() {
        let _ = job.exit_phase();
        return StageOutcome::Cancelled;
    }
    // Strict expiry: a budget of exactly `remaining` is still in time.
    let limit = job.remaining() + Duration::from_millis(1);
    let token = job.cancel_token().clone();
    let result = tokio::select! {
        _ = token.cancelled() => Err(HandlerError::Cancelled),
        r = tokio::time::timeout(limit, invoke(handler, stage, job, ctx)) => r.unwrap_or(Err(HandlerError::TimedOut)),
    };
    let _ = job.exit_phase();

    let result = match result {
        Err(e) if e.is_cancelled() || token.is_cancelled() => return StageOutcome::Cancelled,
        other => other,
    };
    match result {
        Ok(StageOk::Init(out)) => {
            if let Some(rt) = out.runtime {
                let attached = job.runtime().is_some_and(|cur| std::sync::Arc::ptr_eq(&cur, &rt));
                if !attached {
                    if let Err(rt) = job.handle().attach_runtime(rt) {
                        rt.close(grace).await;
                        return StageOutcome::Cancelled;
                    }
                }
            }
            job.stage_results.insert(Stage::Init, json!({ "metadata": out.metadata, "config": out.config }));
            job.metadata = out.metadata;
            job.config = Some(out.config);
            StageOutcome::Next(Stage::Run)
        }
        Ok(StageOk::Run(value)) => {
            job.stage_results.insert(Stage::Run, value);
            close_runtime(job, grace).await;
            StageOutcome::Next(Stage::Eval)
        }
        Ok(StageOk::Eval(out)) => {
            job.stage_results.insert(Stage::Eval, serde_json::to_value(&out).unwrap_or(Value::Null));
            StageOutcome::Done(out.reward)
        }
        Err(e) => fail(handler, stage, job, &e),
    }
}
