use std::time::Duration;

use thiserror::Error;

use super::clock::SharedClock;
use super::stage::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TimerError {
    #[error("stage {0} is already active")]
    PhaseAlreadyActive(Stage),
    #[error("no stage is active")]
    NoActivePhase,
}

/// Per-job timer that only accumulates while a pipeline stage is executing.
///
/// Time between `exit_phase` and the next `enter_phase` (queue wait) is never
/// counted, so the timeout budget tracks execution time alone.
#[derive(Debug, Clone)]
pub struct PausableTimer {
    clock: SharedClock,
    accumulated: [Duration; 3],
    active: Option<(Stage, Duration)>,
}

impl PausableTimer {
    pub fn new(clock: SharedClock) -> Self {
        Self { clock, accumulated: [Duration::ZERO; 3], active: None }
    }

    pub fn enter_phase(&mut self, stage: Stage) -> Result<(), TimerError> {
        if let Some((active, _)) = self.active {
            return Err(TimerError::PhaseAlreadyActive(active));
        }
        self.active = Some((stage, self.clock.now()));
        Ok(())
    }

    /// Closes the active phase and returns how long it lasted.
    pub fn exit_phase(&mut self) -> Result<(Stage, Duration), TimerError> {
        let (stage, start) = self.active.take().ok_or(TimerError::NoActivePhase)?;
        let spent = self.clock.now().saturating_sub(start);
        self.accumulated[stage.index()] += spent;
        Ok((stage, spent))
    }

    pub fn active_stage(&self) -> Option<Stage> {
        self.active.map(|(s, _)| s)
    }

    /// Closed-phase time for `stage`, excluding any phase still running.
    pub fn accumulated(&self, stage: Stage) -> Duration {
        self.accumulated[stage.index()]
    }

    /// Closed-phase time plus the running phase, if any.
    pub fn stage_elapsed(&self, stage: Stage) -> Duration {
        let mut total = self.accumulated[stage.index()];
        if let Some((active, start)) = self.active {
            if active == stage {
                total += self.clock.now().saturating_sub(start);
            }
        }
        total
    }

    pub fn elapsed(&self) -> Duration {
        let closed: Duration = self.accumulated.iter().sum();
        match self.active {
            Some((_, start)) => closed + self.clock.now().saturating_sub(start),
            None => closed,
        }
    }

    /// Strictly greater: a job sitting exactly on its budget has not expired.
    pub fn expired(&self, budget: Duration) -> bool {
        self.elapsed() > budget
    }

    pub fn remaining(&self, budget: Duration) -> Duration {
        budget.saturating_sub(self.elapsed())
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }
}
