//! The pluggable task lifecycle: handlers, their registry, the stage
//! context they run against, and the built-in synthetic tasks.

pub mod context;
pub mod directive;
pub mod echo;
pub mod registry;
pub mod sleepy;
pub mod tool_agent;

use std::collections::BTreeMap;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::RouterError;
use crate::model::{Job, JobReport, MalformedTurn, Stage};
use crate::sandbox::{SandboxError, SandboxRuntime};

pub use context::StageContext;
pub use directive::{parse_directive, Directive};
pub use echo::EchoHandler;
pub use registry::{HandlerFactory, HandlerRegistry, RegistryError};
pub use sleepy::SleepyHandler;
pub use tool_agent::{observation_turn, user_turn, ToolAgentHandler, ToolTask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandlerConfig {
    pub max_turns: u32,
    #[serde(default)]
    pub tool_set: Vec<String>,
    /// Seconds per stage. Carried but not enforced: the job has one budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_budgets: Option<BTreeMap<Stage, f64>>,
}

impl Default for HandlerConfig {
    fn default() -> Self {
        Self { max_turns: 1, tool_set: Vec::new(), stage_budgets: None }
    }
}

impl HandlerConfig {
    pub fn new(max_turns: u32, tool_set: &[&str]) -> Self {
        Self {
            max_turns: max_turns.max(1),
            tool_set: tool_set.iter().map(|s| s.to_string()).collect(),
            stage_budgets: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HandlerError {
    #[error("invalid task instance: {0}")]
    InvalidInstance(String),
    #[error(transparent)]
    Backend(#[from] RouterError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Malformed(#[from] MalformedTurn),
    #[error("job exceeded its timeout budget")]
    TimedOut,
    #[error("job was cancelled")]
    Cancelled,
    #[error("{0}")]
    Task(String),
}

impl HandlerError {
    pub fn is_cancelled(&self) -> bool {
        matches!(self, HandlerError::Cancelled | HandlerError::Backend(RouterError::Cancelled))
    }
}

#[derive(Debug)]
pub struct InitOutput {
    pub runtime: Option<Arc<SandboxRuntime>>,
    pub metadata: Value,
    pub config: HandlerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub reward: f64,
    #[serde(default)]
    pub details: Value,
}

fn fallback(stage: Stage, err: &HandlerError) -> Value {
    json!({ "stage": stage, "error": err.to_string(), "reward": 0.0 })
}

/// One task domain's lifecycle. A fresh instance serves exactly one job,
/// and each stage method is called at most once.
#[async_trait]
pub trait AgentHandler: Send + Sync {
    /// Provisions the environment.
    async fn init(&mut self, job: &mut Job, ctx: &StageContext) -> Result<InitOutput, HandlerError>;

    /// Runs the agent loop, extending the job's trajectory.
    async fn run(&mut self, job: &mut Job, ctx: &StageContext) -> Result<Value, HandlerError>;

    /// Scores the run.
    async fn eval(&mut self, job: &mut Job, ctx: &StageContext) -> Result<EvalOutput, HandlerError>;

    fn init_exception(&mut self, _job: &Job, err: &HandlerError) -> Value {
        fallback(Stage::Init, err)
    }

    fn run_exception(&mut self, _job: &Job, err: &HandlerError) -> Value {
        fallback(Stage::Run, err)
    }

    fn eval_exception(&mut self, _job: &Job, err: &HandlerError) -> Value {
        fallback(Stage::Eval, err)
    }

    /// Response for a terminal job. Must not fail.
    fn final_result(&self, job: &Job) -> JobReport {
        job.report()
    }
}

/// Dispatches the exception callback for `stage`.
pub fn stage_exception(handler: &mut dyn AgentHandler, stage: Stage, job: &Job, err: &HandlerError) -> Value {
    match stage {
        Stage::Init => handler.init_exception(job, err),
        Stage::Run => handler.run_exception(job, err),
        Stage::Eval => handler.eval_exception(job, err),
    }
}

/// Reads an optional field of the instance payload.
pub(crate) fn field<T: serde::de::DeserializeOwned>(instance: &Value, key: &str) -> Result<Option<T>, HandlerError> {
    match instance.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| HandlerError::InvalidInstance(format!("{key}: {e}"))),
    }
}
