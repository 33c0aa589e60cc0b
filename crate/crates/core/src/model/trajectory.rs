use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MalformedTurn {
    #[error("assistant turn has {ids} output ids but {logprobs} logprobs")]
    MisalignedLogprobs { ids: usize, logprobs: usize },
    #[error("assistant turn carries input ids")]
    AssistantWithInput,
    #[error("{0:?} turn carries output ids or logprobs")]
    NonAssistantWithOutput(Role),
}

/// One message of a conversation in token form.
///
/// `text` is a display copy. Nothing reads it back into token IDs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub input_ids: Vec<TokenId>,
    pub output_ids: Vec<TokenId>,
    pub logprobs: Vec<f64>,
    pub text: String,
}

impl Turn {
    /// A non-assistant message, tokenized when it is appended.
    pub fn message(role: Role, input_ids: Vec<TokenId>, text: impl Into<String>) -> Self {
        Self { role, input_ids, output_ids: Vec::new(), logprobs: Vec::new(), text: text.into() }
    }

    /// An assistant message exactly as the backend produced it.
    pub fn generated(output_ids: Vec<TokenId>, logprobs: Vec<f64>, text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, input_ids: Vec::new(), output_ids, logprobs, text: text.into() }
    }

    pub fn validate(&self) -> Result<(), MalformedTurn> {
        match self.role {
            Role::Assistant => {
                if !self.input_ids.is_empty() {
                    return Err(MalformedTurn::AssistantWithInput);
                }
                if self.logprobs.len() != self.output_ids.len() {
                    return Err(MalformedTurn::MisalignedLogprobs {
                        ids: self.output_ids.len(),
                        logprobs: self.logprobs.len(),
                    });
                }
            }
            role => {
                if !self.output_ids.is_empty() || !self.logprobs.is_empty() {
                    return Err(MalformedTurn::NonAssistantWithOutput(role));
                }
            }
        }
        Ok(())
    }

    /// The IDs this turn contributes to later prompts.
    pub fn prompt_ids(&self) -> &[TokenId] {
        match self.role {
            Role::Assistant => &self.output_ids,
            _ => &self.input_ids,
        }
    }
}

/// Append-only token-level record of a multi-turn conversation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenTrajectory {
    turns: Vec<Turn>,
}

impl TokenTrajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, turn: Turn) -> Result<(), MalformedTurn> {
        turn.validate()?;
        self.turns.push(turn);
        Ok(())
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn assistant_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.role == Role::Assistant)
    }

    /// Prompt for the next generation: every turn's IDs, concatenated in order.
    pub fn flatten(&self) -> Vec<TokenId> {
        flatten_turns(&self.turns)
    }

    pub fn into_turns(self) -> Vec<Turn> {
        self.turns
    }
}

pub fn flatten_turns(turns: &[Turn]) -> Vec<TokenId> {
    let len = turns.iter().map(|t| t.prompt_ids().len()).sum();
    let mut out = Vec::with_capacity(len);
    for t in turns {
        out.extend_from_slice(t.prompt_ids());
    }
    out
}
