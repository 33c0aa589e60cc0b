//! The staged rollout engine.

mod engine;
pub mod queue;
mod serial;
mod stage;

pub use engine::{
    CancelAck, Counters, DrainReport, Pipeline, PipelineConfig, QueueDepths, SubmitError, SubmitRequest, UnknownJob,
    WorkerPoolConfig, DEFAULT_TIMEOUT,
};
pub use queue::{JobTicket, StageQueue};
pub use serial::run_serial;
