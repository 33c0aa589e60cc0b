use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TokenId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvalidParams {
    #[error("temperature must be >= 0, got {0}")]
    Temperature(f64),
    #[error("top_p must lie in (0, 1], got {0}")]
    TopP(f64),
    #[error("max_tokens must be >= 1")]
    MaxTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub stop_token_ids: Vec<TokenId>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { temperature: 1.0, top_p: 1.0, max_tokens: 256, stop_token_ids: Vec::new() }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), InvalidParams> {
        // NaN fails this too.
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(InvalidParams::Temperature(self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(InvalidParams::TopP(self.top_p));
        }
        if self.max_tokens == 0 {
            return Err(InvalidParams::MaxTokens);
        }
        Ok(())
    }
}
