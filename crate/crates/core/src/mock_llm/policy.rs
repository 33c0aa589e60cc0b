use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{FinishReason, GenerateResponse};
use crate::model::codec::EOS_TOKEN;
use crate::model::{SamplingParams, TokenId};

pub const DEFAULT_VOCAB: u32 = 512;
/// Natural HASH-mode completions are between 4 and 19 tokens long.
pub const MIN_NATURAL_LEN: u32 = 4;
pub const NATURAL_LEN_SPAN: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockMode {
    Hash,
    Script,
}

impl std::str::FromStr for MockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hash" => Ok(MockMode::Hash),
            "script" => Ok(MockMode::Script),
            other => Err(format!("unknown mode {other:?}; expected hash or script")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    #[serde(rename = "mean_ms", with = "crate::util::duration_ms")]
    pub mean: Duration,
    #[serde(rename = "jitter_ms", with = "crate::util::duration_ms")]
    pub jitter: Duration,
}

impl LatencyModel {
    pub fn fixed(mean: Duration) -> Self {
        Self { mean, jitter: Duration::ZERO }
    }

    /// Uniform on [mean - jitter, mean + jitter], floored at zero.
    pub fn sample(&self, rng: &mut impl Rng) -> Duration {
        if self.jitter.is_zero() {
            return self.mean;
        }
        let j = self.jitter.as_secs_f64();
        let s = self.mean.as_secs_f64() + rng.random_range(-j..=j);
        Duration::from_secs_f64(s.max(0.0))
    }
}

/// Scripted completions keyed by prompt digest. Prompts without an entry
/// replay `fallback` if set, otherwise fall through to HASH mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub by_digest: HashMap<String, Vec<TokenId>>,
    #[serde(default)]
    pub fallback: Option<Vec<TokenId>>,
}

impl Script {
    pub fn insert(&mut self, prompt_ids: &[TokenId], output: Vec<TokenId>) {
        self.by_digest.insert(prompt_digest(prompt_ids), output);
    }

    pub fn lookup(&self, prompt_ids: &[TokenId]) -> Option<&[TokenId]> {
        self.by_digest.get(&prompt_digest(prompt_ids)).or(self.fallback.as_ref()).map(Vec::as_slice)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Hex SHA-256 of the prompt's ids as little-endian u32s.
pub fn prompt_digest(prompt_ids: &[TokenId]) -> String {
    let mut h = Sha256::new();
    for id in prompt_ids {
        h.update(id.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn digest_u64(seed: u64, prompt_ids: &[TokenId], tag: &[u8], k: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((prompt_ids.len() as u64).to_le_bytes());
    for id in prompt_ids {
        h.update(id.to_le_bytes());
    }
    h.update(tag);
    h.update(k.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 has 32 bytes"))
}

pub fn hash_logprob(token: TokenId) -> f64 {
    -(1.0 + f64::from(token % 7) / 10.0)
}

pub fn natural_len(seed: u64, prompt_ids: &[TokenId]) -> u32 {
    MIN_NATURAL_LEN + (digest_u64(seed, prompt_ids, b"len", 0) % u64::from(NATURAL_LEN_SPAN)) as u32
}

pub fn hash_token(seed: u64, prompt_ids: &[TokenId], k: u32, vocab_size: u32) -> TokenId {
    (digest_u64(seed, prompt_ids, b"tok", u64::from(k)) % u64::from(vocab_size)) as TokenId
}

fn is_stop(token: TokenId, params: &SamplingParams) -> bool {
    token == EOS_TOKEN || params.stop_token_ids.contains(&token)
}

/// The HASH-mode completion as a pure function. Stop tokens end the
/// completion and are not emitted.
pub fn hash_generate(seed: u64, vocab_size: u32, prompt_ids: &[TokenId], params: &SamplingParams) -> GenerateResponse {
    let natural = natural_len(seed, prompt_ids);
    let mut output_ids = Vec::new();
    let mut finish_reason = FinishReason::Stop;
    for k in 0..natural {
        if output_ids.len() as u32 >= params.max_tokens {
            finish_reason = FinishReason::Length;
            break;
        }
        let tok = hash_token(seed, prompt_ids, k, vocab_size);
        if is_stop(tok, params) {
            break;
        }
        output_ids.push(tok);
    }
    let logprobs = output_ids.iter().map(|&t| hash_logprob(t)).collect();
    GenerateResponse { output_ids, logprobs, finish_reason }
}

/// Replays a scripted sequence up to the first stop token or `max_tokens`.
pub fn replay(sequence: &[TokenId], params: &SamplingParams) -> GenerateResponse {
    let mut output_ids = Vec::new();
    let mut finish_reason = FinishReason::Stop;
    for &tok in sequence {
        if is_stop(tok, params) {
            break;
        }
        if output_ids.len() as u32 >= params.max_tokens {
            finish_reason = FinishReason::Length;
            break;
        }
        output_ids.push(tok);
    }
    let logprobs = output_ids.iter().map(|&t| hash_logprob(t)).collect();
    GenerateResponse { output_ids, logprobs, finish_reason }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockPolicy {
    pub mode: MockMode,
    pub seed: u64,
    pub vocab_size: u32,
    pub latency: LatencyModel,
    pub script: Script,
}

impl Default for MockPolicy {
    fn default() -> Self {
        Self::hash(0)
    }
}

impl MockPolicy {
    pub fn hash(seed: u64) -> Self {
        Self {
            mode: MockMode::Hash,
            seed,
            vocab_size: DEFAULT_VOCAB,
            latency: LatencyModel::default(),
            script: Script::default(),
        }
    }

    pub fn scripted(seed: u64, script: Script) -> Self {
        Self { mode: MockMode::Script, script, ..Self::hash(seed) }
    }

    pub fn with_latency(mut self, latency: LatencyModel) -> Self {
        self.latency = latency;
        self
    }

    pub fn respond(&self, prompt_ids: &[TokenId], params: &SamplingParams) -> GenerateResponse {
        if self.mode == MockMode::Script {
            if let Some(seq) = self.script.lookup(prompt_ids) {
                return replay(seq, params);
            }
        }
        hash_generate(self.seed, self.vocab_size, prompt_ids, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(max_tokens: u32) -> SamplingParams {
        SamplingParams { max_tokens, ..SamplingParams::default() }
    }

    #[test]
    fn hash_is_deterministic_and_aligned() {
        let a = hash_generate(7, 512, &[1, 2, 3], &params(4));
        let b = hash_generate(7, 512, &[1, 2, 3], &params(4));
        assert_eq!(a, b);
        assert_eq!(a.output_ids.len(), 4);
        assert_eq!(a.logprobs.len(), a.output_ids.len());
        assert_ne!(hash_generate(8, 512, &[1, 2, 3], &params(4)).output_ids, a.output_ids);
    }

    #[test]
    fn hash_length_is_min_of_budget_and_natural() {
        for p in 0..50u32 {
            let prompt = [p, p + 1];
            let l = natural_len(3, &prompt);
            assert!((MIN_NATURAL_LEN..MIN_NATURAL_LEN + NATURAL_LEN_SPAN).contains(&l));
            let full = hash_generate(3, 256, &prompt, &params(256));
            assert_eq!(full.output_ids.len() as u32, l);
            assert_eq!(full.finish_reason, FinishReason::Stop);
            let one = hash_generate(3, 256, &prompt, &params(1));
            assert_eq!(one.output_ids.len(), 1);
            assert_eq!(one.finish_reason, FinishReason::Length);
        }
    }

    #[test]
    fn logprob_formula() {
        assert_eq!(hash_logprob(0), -1.0);
        assert!((hash_logprob(13) - -1.6).abs() < 1e-12);
    }

    #[test]
    fn script_replay_stops_at_stop_token_or_budget() {
        let mut s = Script::default();
        s.insert(&[10], vec![42, 99, EOS_TOKEN]);
        s.insert(&[11], vec![1, 2, 3, 4, 5]);
        let p = MockPolicy::scripted(0, s);
        let r = p.respond(&[10], &params(16));
        assert_eq!(r.output_ids, vec![42, 99]);
        assert_eq!(r.finish_reason, FinishReason::Stop);
        let r = p.respond(&[11], &params(2));
        assert_eq!(r.output_ids, vec![1, 2]);
        assert_eq!(r.finish_reason, FinishReason::Length);
        // Unknown prompt without a fallback behaves like HASH mode.
        assert_eq!(p.respond(&[12], &params(16)), hash_generate(0, DEFAULT_VOCAB, &[12], &params(16)));
    }

    #[test]
    fn exact_budget_on_script_end_is_stop() {
        let r = replay(&[1, 2], &params(2));
        assert_eq!(r.finish_reason, FinishReason::Stop);
    }
}
