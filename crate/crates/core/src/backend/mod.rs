//! Inference backend management: registration, least-load selection,
//! sticky per-job routing and retrying generation.

mod heap;
pub mod pool;
pub mod router;
pub mod wire;

pub use pool::{validate_address, BackendInfo, BackendPool, PoolError, SelectionPolicy};
pub use router::{Generation, LlmRouter, RetryConfig, RouterError};
pub use wire::{generate_url, FinishReason, GenerateRequest, GenerateResponse};
