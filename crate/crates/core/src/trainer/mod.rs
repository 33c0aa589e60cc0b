//! The trainer side: a rollout client, backend placement, DAPO-style
//! collection schedulers, a reward ledger and checkpoint swapping.

pub mod assign;
pub mod client;
pub mod group;
pub mod ledger;
pub mod scheduler;
pub mod swap;
pub mod workload;

pub use assign::{hierarchical_assign, host_of, AssignmentTable};
pub use client::{ClientError, RolloutClient};
pub use group::{is_informative, is_informative_with, GroupState, IncompleteGroup, PromptGroup, RolloutOutcome};
pub use ledger::{Ledger, LedgerRecord};
pub use scheduler::{ActivityMeter, IterationPlan, IterationResult, Mode, Trainer, TrainerError, DEFAULT_MAX_WAVES};
pub use swap::{checkpoint_swap, SwapReport};
pub use workload::{SyntheticSpec, Workload, WorkloadError, WorkloadPrompt};
