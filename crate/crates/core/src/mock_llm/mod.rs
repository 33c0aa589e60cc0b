//! Deterministic token-in/token-out inference backend for tests and
//! benchmarks, plus the re-tokenization drift probe.

pub mod drift;
pub mod policy;
pub mod server;

pub use drift::{drift_probe, DriftReport, ToyTokenizer};
pub use policy::{
    hash_generate, hash_logprob, natural_len, prompt_digest, replay, LatencyModel, MockMode, MockPolicy, Script,
    DEFAULT_VOCAB,
};
pub use server::{app, MockServer, MockState};
