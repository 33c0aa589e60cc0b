use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// What one rollout contributed to its group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutOutcome {
    Reward(f64),
    /// The rollout failed for infrastructure reasons; it carries no reward.
    Error(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GroupState {
    Pending,
    InFlight,
    Complete,
    CarriedOver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("group has {have} of {want} rollouts")]
pub struct IncompleteGroup {
    pub have: usize,
    pub want: usize,
}

/// The rollouts of one prompt. Indexed so that a carried-over group only
/// reissues the rollouts it is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptGroup {
    pub prompt_id: String,
    pub source: usize,
    pub payload: Value,
    pub n: usize,
    pub outcomes: BTreeMap<usize, RolloutOutcome>,
    pub state: GroupState,
}

impl PromptGroup {
    pub fn new(prompt_id: impl Into<String>, source: usize, payload: Value, n: usize) -> Self {
        Self { prompt_id: prompt_id.into(), source, payload, n, outcomes: BTreeMap::new(), state: GroupState::Pending }
    }

    pub fn is_complete(&self) -> bool {
        self.outcomes.len() == self.n
    }

    pub fn missing(&self) -> Vec<usize> {
        (0..self.n).filter(|k| !self.outcomes.contains_key(k)).collect()
    }

    /// Records a result; false if that rollout already had one.
    pub fn record(&mut self, index: usize, outcome: RolloutOutcome) -> bool {
        if index >= self.n || self.outcomes.contains_key(&index) {
            return false;
        }
        self.outcomes.insert(index, outcome);
        if self.is_complete() {
            self.state = GroupState::Complete;
        }
        true
    }

    pub fn usable_rewards(&self) -> Vec<f64> {
        self.outcomes
            .values()
            .filter_map(|o| match o {
                RolloutOutcome::Reward(r) => Some(*r),
                RolloutOutcome::Error(_) => None,
            })
            .collect()
    }
}

/// Nonuniform rewards among at least two usable rollouts. Rewards within
/// `tolerance` of each other count as equal.
pub fn is_informative_with(group: &PromptGroup, tolerance: f64) -> Result<bool, IncompleteGroup> {
    if !group.is_complete() {
        return Err(IncompleteGroup { have: group.outcomes.len(), want: group.n });
    }
    let rewards = group.usable_rewards();
    if rewards.len() < 2 {
        return Ok(false);
    }
    let lo = rewards.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(hi - lo > tolerance)
}

pub fn is_informative(group: &PromptGroup) -> Result<bool, IncompleteGroup> {
    is_informative_with(group, 0.0)
}
