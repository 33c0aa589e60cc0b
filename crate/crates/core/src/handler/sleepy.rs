use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::{json, Value};

use super::tool_agent::user_turn;
use super::{AgentHandler, EvalOutput, HandlerConfig, HandlerError, InitOutput, StageContext};
use crate::model::{Job, Stage};
use crate::sandbox::{ActionRequest, RuntimeSpec};

/// Sleepy task parameters, read from the instance payload.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SleepySpec {
    pub init_ms: u64,
    pub run_ms: u64,
    pub eval_ms: u64,
    pub reward: f64,
    /// Generation calls made during RUN, each followed by a user turn.
    pub llm_calls: u32,
    /// Sleep through a bash action instead of in-process. Implies `sandbox`.
    pub shell: bool,
    pub sandbox: bool,
    pub fail_stage: Option<Stage>,
}

impl Default for SleepySpec {
    fn default() -> Self {
        Self {
            init_ms: 0,
            run_ms: 0,
            eval_ms: 0,
            reward: 1.0,
            llm_calls: 0,
            shell: false,
            sandbox: false,
            fail_stage: None,
        }
    }
}

/// Fixed per-stage latency, for pipeline benchmarks and fault injection.
#[derive(Debug, Default)]
pub struct SleepyHandler {
    spec: SleepySpec,
}

impl SleepyHandler {
    async fn pause(&self, job: &Job, ctx: &StageContext, ms: u64, stage: Stage) -> Result<(), HandlerError> {
        if ms > 0 {
            let d = Duration::from_millis(ms);
            if self.spec.shell && job.runtime().is_some() {
                let cmd = format!("sleep {}", d.as_secs_f64());
                ctx.execute(job, ActionRequest::bash(cmd, d + Duration::from_secs(30))).await?;
            } else {
                ctx.sleep(job, d).await?;
            }
        }
        if self.spec.fail_stage == Some(stage) {
            return Err(HandlerError::Task(format!("injected failure in {stage}")));
        }
        Ok(())
    }
}

#[async_trait]
impl AgentHandler for SleepyHandler {
    async fn init(&mut self, job: &mut Job, ctx: &StageContext) -> Result<InitOutput, HandlerError> {
        self.spec = if job.instance.is_null() {
            SleepySpec::default()
        } else {
            serde_json::from_value(job.instance.clone()).map_err(|e| HandlerError::InvalidInstance(e.to_string()))?
        };
        let runtime = if self.spec.sandbox || self.spec.shell {
            Some(ctx.start_runtime(job, RuntimeSpec::default()).await?)
        } else {
            None
        };
        self.pause(job, ctx, self.spec.init_ms, Stage::Init).await?;
        let tools: &[&str] = if self.spec.shell { &["bash"] } else { &[] };
        Ok(InitOutput {
            runtime,
            metadata: json!({ "task": "sleepy" }),
            config: HandlerConfig::new(self.spec.llm_calls.max(1), tools),
        })
    }

    async fn run(&mut self, job: &mut Job, ctx: &StageContext) -> Result<Value, HandlerError> {
        if self.spec.llm_calls > 0 {
            job.append_turn(user_turn("go"))?;
            for k in 0..self.spec.llm_calls {
                if k > 0 {
                    job.append_turn(user_turn("next"))?;
                }
                ctx.generate_turn(job).await?;
            }
        }
        self.pause(job, ctx, self.spec.run_ms, Stage::Run).await?;
        Ok(json!({ "llm_calls": self.spec.llm_calls }))
    }

    async fn eval(&mut self, job: &mut Job, ctx: &StageContext) -> Result<EvalOutput, HandlerError> {
        // The runtime is gone by now, so EVAL always sleeps in-process.
        let shell = std::mem::replace(&mut self.spec.shell, false);
        let r = self.pause(job, ctx, self.spec.eval_ms, Stage::Eval).await;
        self.spec.shell = shell;
        r?;
        Ok(EvalOutput { reward: self.spec.reward, details: Value::Null })
    }
}
