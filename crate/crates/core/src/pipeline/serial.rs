//! One job at a time, all three stages back to back. The baseline the
//! pipelined engine is measured against.

use std::sync::Arc;
use std::time::Duration;

use super::engine::{SubmitError, SubmitRequest};
use super::stage::{close_runtime, execute_stage, StageOutcome};
use crate::handler::{HandlerRegistry, StageContext};
use crate::model::{Job, JobId, JobReport, JobShared, JobStatus, SharedClock, Stage};

pub async fn run_serial(
    registry: &HandlerRegistry,
    ctx: &StageContext,
    clock: SharedClock,
    grace: Duration,
    requests: Vec<SubmitRequest>,
) -> Result<Vec<JobReport>, SubmitError> {
    let mut reports = Vec::with_capacity(requests.len());
    for req in requests {
        let mut handler =
            registry.dispatch(&req.task_name).map_err(|_| SubmitError::UnknownTask(req.task_name.clone()))?;
        let id = req.job_id.unwrap_or_else(JobId::generate);
        let handle = Arc::new(JobShared::new(id, req.task_name, clock.clone()));
        let mut job = Job::new(handle, req.instance, req.sampling_params, req.timeout);
        let mut stage = Stage::Init;
        loop {
            match execute_stage(handler.as_mut(), stage, &mut job, ctx, grace, || false).await {
                StageOutcome::Next(next) => stage = next,
                StageOutcome::Done(reward) => {
                    let _ = job.finish(JobStatus::Done, Some(reward), None);
                    break;
                }
                StageOutcome::Failed { reward, error } => {
                    let _ = job.finish(JobStatus::Failed, Some(reward), Some(error));
                    break;
                }
                StageOutcome::Cancelled => {
                    let _ = job.finish(JobStatus::Cancelled, None, None);
                    break;
                }
            }
        }
        close_runtime(&job, grace).await;
        ctx.router().release(job.id().as_str());
        reports.push(handler.final_result(&job));
    }
    Ok(reports)
}
