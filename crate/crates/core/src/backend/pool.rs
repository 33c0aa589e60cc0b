use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::heap::{HeapEntry, IndexedHeap};

/// How a new task picks its backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Min-heap on tasks assigned since registration; never decremented.
    #[default]
    LeastAssigned,
    /// Min-heap on tasks currently holding the backend; released when the task ends.
    LeastInFlight,
    /// Fixed round-robin in registration order, ignoring load. Baseline only.
    StaticSplit,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PoolError {
    #[error("malformed backend address {0:?}")]
    MalformedAddress(String),
    #[error("backend {0} is already registered")]
    DuplicateAddress(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub address: String,
    pub counter: u64,
    pub in_flight: u64,
}

#[derive(Debug, Clone)]
struct Stats {
    counter: u64,
    in_flight: u64,
    seq: u64,
    #[allow(dead_code)]
    registered_at: Instant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Assignment {
    address: String,
    /// Registration sequence of the backend, so a release after
    /// clear + re-add does not touch the new entry.
    seq: u64,
}

/// Backend registry with sticky per-job routing. Not internally synchronized;
/// the router wraps it in one lock so assign/add/clear are atomic.
#[derive(Debug, Clone, Default)]
pub struct BackendPool {
    policy: SelectionPolicy,
    heap: IndexedHeap,
    stats: HashMap<String, Stats>,
    assignments: HashMap<String, Assignment>,
    next_seq: u64,
    rr_cursor: u64,
}

pub fn validate_address(address: &str) -> Result<(), PoolError> {
    let bad = || PoolError::MalformedAddress(address.to_string());
    let url = url::Url::parse(address).map_err(|_| bad())?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none_or(str::is_empty) {
        return Err(bad());
    }
    Ok(())
}

impl BackendPool {
    pub fn new(policy: SelectionPolicy) -> Self {
        Self { policy, ..Self::default() }
    }

    pub fn policy(&self) -> SelectionPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn contains(&self, address: &str) -> bool {
        self.heap.contains(address)
    }

    pub fn add(&mut self, address: &str) -> Result<(), PoolError> {
        validate_address(address)?;
        if self.heap.contains(address) {
            return Err(PoolError::DuplicateAddress(address.to_string()));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(HeapEntry { address: address.to_string(), key: 0, seq });
        self.stats.insert(address.to_string(), Stats { counter: 0, in_flight: 0, seq, registered_at: Instant::now() });
        Ok(())
    }

    /// Empties the pool and drops every sticky assignment.
    pub fn clear(&mut self) {
        self.heap.clear();
        self.stats.clear();
        self.assignments.clear();
    }

    /// The sticky backend for `job_id`, or a fresh pick charged to that
    /// backend. None when the pool is empty.
    pub fn assign(&mut self, job_id: &str) -> Option<String> {
        if let Some(a) = self.assignments.get(job_id) {
            return Some(a.address.clone());
        }
        let address = match self.policy {
            SelectionPolicy::LeastAssigned | SelectionPolicy::LeastInFlight => self.heap.peek()?.address.clone(),
            SelectionPolicy::StaticSplit => {
                let mut order: Vec<(u64, &String)> = self.stats.iter().map(|(a, s)| (s.seq, a)).collect();
                if order.is_empty() {
                    return None;
                }
                order.sort_unstable();
                let pick = order[(self.rr_cursor % order.len() as u64) as usize].1.clone();
                self.rr_cursor += 1;
                pick
            }
        };
        let stats = self.stats.get_mut(&address).expect("heap and stats agree");
        stats.counter += 1;
        stats.in_flight += 1;
        let (counter, in_flight, seq) = (stats.counter, stats.in_flight, stats.seq);
        match self.policy {
            SelectionPolicy::LeastAssigned => self.heap.update(&address, |_| counter),
            SelectionPolicy::LeastInFlight => self.heap.update(&address, |_| in_flight),
            SelectionPolicy::StaticSplit => true,
        };
        self.assignments.insert(job_id.to_string(), Assignment { address: address.clone(), seq });
        Some(address)
    }

    pub fn assignment(&self, job_id: &str) -> Option<&str> {
        self.assignments.get(job_id).map(|a| a.address.as_str())
    }

    pub fn assignment_count(&self) -> usize {
        self.assignments.len()
    }

    /// Forgets the job's assignment. Under the in-flight policy the backend
    /// is credited back.
    pub fn release(&mut self, job_id: &str) -> bool {
        let Some(a) = self.assignments.remove(job_id) else {
            return false;
        };
        if let Some(stats) = self.stats.get_mut(&a.address) {
            if stats.seq == a.seq {
                stats.in_flight = stats.in_flight.saturating_sub(1);
                let in_flight = stats.in_flight;
                if self.policy == SelectionPolicy::LeastInFlight {
                    self.heap.update(&a.address, |_| in_flight);
                }
            }
        }
        true
    }

    /// Drops the assignment only if it still points at `address`, so the
    /// next call re-resolves. Used when that backend could not be reached.
    pub fn invalidate(&mut self, job_id: &str, address: &str) -> bool {
        if self.assignments.get(job_id).is_some_and(|a| a.address == address) {
            self.release(job_id)
        } else {
            false
        }
    }

    /// Registered backends in registration order.
    pub fn snapshot(&self) -> Vec<BackendInfo> {
        let mut entries: Vec<(u64, BackendInfo)> = self
            .stats
            .iter()
            .map(|(a, s)| (s.seq, BackendInfo { address: a.clone(), counter: s.counter, in_flight: s.in_flight }))
            .collect();
        entries.sort_by_key(|(seq, _)| *seq);
        entries.into_iter().map(|(_, b)| b).collect()
    }

    pub fn counter(&self, address: &str) -> Option<u64> {
        self.stats.get(address).map(|s| s.counter)
    }
}
