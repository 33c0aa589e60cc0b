//! Rollout-as-a-service: a staged rollout server for multi-turn agent
//! training, plus the sandbox, inference-backend and trainer pieces around it.

pub mod backend;
pub mod handler;
pub mod mock_llm;
pub mod model;
pub mod pipeline;
pub mod sandbox;
pub mod server;
pub mod trainer;
pub(crate) mod util;

pub use model::*;
