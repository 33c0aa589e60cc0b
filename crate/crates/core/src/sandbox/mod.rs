//! Simulated sandbox runtimes: loopback addressing, a Unix-socket action
//! channel backed by real shell subprocesses, graceful-then-forced shutdown,
//! and the image-builder cache decision.

pub mod allocator;
pub mod cache;
pub mod census;
mod executor;
pub mod frame;
pub mod protocol;
pub mod runtime;

use std::time::Duration;

pub use allocator::LoopbackAllocator;
pub use cache::{cache_decision, CacheDecision, CacheKey, CacheMode, ImageBuilder};
pub use protocol::{ActionFailure, ActionKind, ActionReply, ActionRequest, ActionResult};
pub use runtime::{
    CloseReport, KeeperBehavior, ManagerConfig, RuntimeFlags, RuntimeSpec, RuntimeState, SandboxManager,
    SandboxRuntime, DEFAULT_GRACE,
};

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("loopback address pool exhausted")]
    PoolExhausted,
    #[error("runtime did not answer a ping within {0:?}")]
    StartupTimeout(Duration),
    #[error("action {action_id} exceeded its {timeout:?} timeout")]
    ActionTimeout { action_id: String, timeout: Duration },
    #[error("runtime is closed")]
    RuntimeClosed,
    #[error("action channel protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
