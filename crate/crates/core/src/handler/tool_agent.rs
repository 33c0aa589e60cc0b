use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};

use super::directive::{parse_directive, Directive};
use super::{field, AgentHandler, EvalOutput, HandlerConfig, HandlerError, InitOutput, StageContext};
use crate::model::{codec, Job, Role, Turn};
use crate::sandbox::{ActionRequest, RuntimeFlags, RuntimeSpec};

pub const DEFAULT_MAX_TURNS: u32 = 8;
pub const DEFAULT_ACTION_TIMEOUT: Duration = Duration::from_secs(30);

pub fn user_turn(text: &str) -> Turn {
    Turn::message(Role::User, codec::encode(text), text)
}

/// How a tool result enters the conversation.
pub fn observation_turn(output: &str) -> Turn {
    Turn::message(Role::Tool, codec::encode(output), output)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToolTask {
    /// Reward is exact numeric match against `answer`.
    Arith,
    /// Reward is a match against `expect` if given, else finishing at all.
    ShellSim,
}

/// A bash-tool agent: the model issues `@@tool bash {"cmd": ...}@@`
/// directives and ends with `@@finish <answer>@@`.
#[derive(Debug)]
pub struct ToolAgentHandler {
    task: ToolTask,
    answer: Option<String>,
    truncated: bool,
}

impl ToolAgentHandler {
    pub fn new(task: ToolTask) -> Self {
        Self { task, answer: None, truncated: false }
    }

    fn prompt(&self, instance: &Value) -> Result<String, HandlerError> {
        let key = match self.task {
            ToolTask::Arith => "question",
            ToolTask::ShellSim => "prompt_text",
        };
        field::<String>(instance, key)?
            .filter(|s| !s.is_empty())
            .ok_or_else(|| HandlerError::InvalidInstance(format!("{key} is required")))
    }
}

fn numbers_equal(answer: &str, truth: &Value) -> bool {
    let parsed: Option<f64> = answer.trim().parse().ok();
    let expected = match truth {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    };
    matches!((parsed, expected), (Some(a), Some(b)) if a == b)
}

#[async_trait]
impl AgentHandler for ToolAgentHandler {
    async fn init(&mut self, job: &mut Job, ctx: &StageContext) -> Result<InitOutput, HandlerError> {
        self.prompt(&job.instance)?;
        let max_turns: u32 = field(&job.instance, "max_turns")?.unwrap_or(DEFAULT_MAX_TURNS);
        if max_turns == 0 {
            return Err(HandlerError::InvalidInstance("max_turns must be at least 1".into()));
        }
        let flags: RuntimeFlags = field(&job.instance, "flags")?.unwrap_or_default();
        let rt = ctx.start_runtime(job, RuntimeSpec { flags, ..RuntimeSpec::default() }).await?;
        let task = match self.task {
            ToolTask::Arith => "arith",
            ToolTask::ShellSim => "shell-sim",
        };
        Ok(InitOutput {
            runtime: Some(rt.clone()),
            metadata: json!({ "task": task, "runtime_id": rt.id(), "address": rt.address().to_string() }),
            config: HandlerConfig::new(max_turns, &["bash"]),
        })
    }

    async fn run(&mut self, job: &mut Job, ctx: &StageContext) -> Result<Value, HandlerError> {
        let prompt = self.prompt(&job.instance)?;
        let config = job.config.clone().unwrap_or_else(|| HandlerConfig::new(DEFAULT_MAX_TURNS, &["bash"]));
        job.append_turn(user_turn(&prompt))?;
        let mut assistant_turns = 0;
        let mut actions = 0;
        self.truncated = true;
        while assistant_turns < config.max_turns {
            let g = ctx.generate_turn(job).await?;
            assistant_turns += 1;
            let text = codec::decode(&g.output_ids);
            let observation = match parse_directive(&text) {
                Some(Directive::Finish(answer)) => {
                    self.answer = Some(answer);
                    self.truncated = false;
                    break;
                }
                None => {
                    self.truncated = false;
                    break;
                }
                Some(Directive::Invalid(reason)) => format!("error: {reason}"),
                Some(Directive::Tool { name, .. }) if !config.tool_set.contains(&name) => {
                    format!("error: unknown tool {name:?}")
                }
                Some(Directive::Tool { args, .. }) => match args.get("cmd").and_then(Value::as_str) {
                    None => "error: bash requires a string \"cmd\"".to_string(),
                    Some(cmd) => {
                        actions += 1;
                        let result = ctx.execute(job, ActionRequest::bash(cmd, DEFAULT_ACTION_TIMEOUT)).await?;
                        result.output
                    }
                },
            };
            job.append_turn(observation_turn(&observation))?;
        }
        Ok(json!({
            "answer": self.answer,
            "truncated": self.truncated,
            "assistant_turns": assistant_turns,
            "actions": actions,
        }))
    }

    async fn eval(&mut self, job: &mut Job, _ctx: &StageContext) -> Result<EvalOutput, HandlerError> {
        let answer = self.answer.clone().unwrap_or_default();
        let reward = match self.task {
            ToolTask::Arith => {
                let truth = job
                    .instance
                    .get("answer")
                    .ok_or_else(|| HandlerError::InvalidInstance("answer is required".into()))?;
                numbers_equal(&answer, truth)
            }
            ToolTask::ShellSim => match field::<String>(&job.instance, "expect")? {
                Some(expect) => self.answer.is_some() && answer.trim() == expect.trim(),
                None => self.answer.is_some(),
            },
        };
        Ok(EvalOutput {
            reward: if reward { 1.0 } else { 0.0 },
            details: json!({ "answer": self.answer, "truncated": self.truncated }),
        })
    }
}
