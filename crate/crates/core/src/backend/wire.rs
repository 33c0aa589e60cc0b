//! Backend wire protocol: `POST <base>/v1/generate` with JSON bodies.

use serde::{Deserialize, Serialize};

use crate::model::{SamplingParams, TokenId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt_ids: Vec<TokenId>,
    #[serde(default)]
    pub sampling_params: SamplingParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub output_ids: Vec<TokenId>,
    pub logprobs: Vec<f64>,
    pub finish_reason: FinishReason,
}

/// The generate endpoint for a registered base address. Addresses may be
/// given with or without the trailing `/v1`.
pub fn generate_url(address: &str) -> String {
    let base = address.trim_end_matches('/');
    if base.ends_with("/v1") {
        format!("{base}/generate")
    } else {
        format!("{base}/v1/generate")
    }
}
