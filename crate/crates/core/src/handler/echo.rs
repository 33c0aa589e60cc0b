use async_trait::async_trait;
use serde_json::{json, Value};

use super::tool_agent::user_turn;
use super::{field, AgentHandler, EvalOutput, HandlerConfig, HandlerError, InitOutput, StageContext};
use crate::backend::FinishReason;
use crate::model::Job;

/// Sends the prompt, records the completion. With `turns` > 1 the user
/// answers "continue" between completions. Rewards a natural stop.
#[derive(Debug, Default)]
pub struct EchoHandler {
    last_finish: Option<FinishReason>,
}

#[async_trait]
impl AgentHandler for EchoHandler {
    async fn init(&mut self, job: &mut Job, _ctx: &StageContext) -> Result<InitOutput, HandlerError> {
        let turns: u32 = field(&job.instance, "turns")?.unwrap_or(1);
        if turns == 0 {
            return Err(HandlerError::InvalidInstance("turns must be at least 1".into()));
        }
        Ok(InitOutput { runtime: None, metadata: json!({ "task": "echo" }), config: HandlerConfig::new(turns, &[]) })
    }

    async fn run(&mut self, job: &mut Job, ctx: &StageContext) -> Result<Value, HandlerError> {
        let prompt: String = field(&job.instance, "prompt_text")?.unwrap_or_else(|| "hello".into());
        if prompt.is_empty() {
            return Err(HandlerError::InvalidInstance("prompt_text must be nonempty".into()));
        }
        let turns = job.config.as_ref().map_or(1, |c| c.max_turns);
        job.append_turn(user_turn(&prompt))?;
        for k in 0..turns {
            if k > 0 {
                job.append_turn(user_turn("continue"))?;
            }
            let g = ctx.generate_turn(job).await?;
            self.last_finish = Some(g.finish_reason);
        }
        Ok(json!({ "turns": turns, "finish_reason": self.last_finish }))
    }

    async fn eval(&mut self, _job: &mut Job, _ctx: &StageContext) -> Result<EvalOutput, HandlerError> {
        let reward = if self.last_finish == Some(FinishReason::Stop) { 1.0 } else { 0.0 };
        Ok(EvalOutput { reward, details: json!({ "finish_reason": self.last_finish }) })
    }
}
