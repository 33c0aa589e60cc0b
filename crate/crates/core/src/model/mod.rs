//! Shared data types: stages, job state, token trajectories and the
//! phase-aware timer.

pub mod clock;
pub mod codec;
pub mod job;
pub mod sampling;
pub mod stage;
pub mod timer;
pub mod trajectory;

pub type TokenId = u32;

pub use clock::{Clock, ManualClock, SharedClock, SystemClock};
pub use job::{
    CompletionSignal, Job, JobError, JobHandle, JobId, JobReport, JobShared, JobStatus, JobTimings, TransitionError,
};
pub use sampling::{InvalidParams, SamplingParams};
pub use stage::Stage;
pub use timer::{PausableTimer, TimerError};
pub use trajectory::{MalformedTurn, Role, TokenTrajectory, Turn};
