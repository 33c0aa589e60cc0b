//! The two DAPO collection strategies: batch-by-batch waves, and
//! continuous replenishment with early termination and carryover.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::task::JoinSet;
use tracing::{debug, warn};

use super::client::{ClientError, RolloutClient};
use super::group::{is_informative_with, GroupState, PromptGroup, RolloutOutcome};
use super::ledger::{Ledger, LedgerRecord};
use super::workload::Workload;
use crate::model::{JobId, JobReport, JobStatus};

pub const DEFAULT_MAX_WAVES: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("gave up after {waves} waves with {informative} informative prompts")]
    MaxWaves { waves: usize, informative: usize },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Batch,
    Async,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "batch" => Ok(Mode::Batch),
            "async" => Ok(Mode::Async),
            other => Err(format!("unknown mode {other:?}; expected batch or async")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationPlan {
    pub target_informative: usize,
    /// Maximum rollouts in flight at once.
    pub concurrency_cap: usize,
    pub carryover: Vec<PromptGroup>,
    /// Async mode only: cancel outstanding rollouts once the target is met.
    pub early_termination: bool,
}

impl IterationPlan {
    pub fn new(target_informative: usize, concurrency_cap: usize) -> Self {
        Self { target_informative, concurrency_cap, carryover: Vec::new(), early_termination: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationResult {
    pub mode: Mode,
    pub informative_groups: Vec<PromptGroup>,
    pub wall_time: Duration,
    pub rollouts_issued: usize,
    pub carried_over: Vec<PromptGroup>,
    /// Rollouts that were sent /cancel.
    pub cancelled: usize,
    pub waves: usize,
    /// Share of the collection time with fewer than `concurrency_cap`
    /// rollouts in flight.
    pub idle_fraction: f64,
    /// Informative groups beyond the target that batch mode threw away.
    pub surplus_discarded: usize,
}

/// Time-weighted record of in-flight count against the cap.
#[derive(Debug)]
pub struct ActivityMeter {
    cap: usize,
    start: Instant,
    last: Instant,
    in_flight: usize,
    idle: Duration,
    stopped: Option<Instant>,
}

impl ActivityMeter {
    pub fn new(cap: usize) -> Self {
        let now = Instant::now();
        Self { cap, start: now, last: now, in_flight: 0, idle: Duration::ZERO, stopped: None }
    }

    fn advance(&mut self, now: Instant) {
        if self.stopped.is_none() && self.in_flight < self.cap {
            self.idle += now - self.last;
        }
        self.last = now;
    }

    pub fn set(&mut self, in_flight: usize) {
        self.advance(Instant::now());
        self.in_flight = in_flight;
    }

    /// No more work remains; later time is not idle.
    pub fn stop(&mut self) {
        if self.stopped.is_none() {
            let now = Instant::now();
            self.advance(now);
            self.stopped = Some(now);
        }
    }

    pub fn idle_fraction(&self) -> f64 {
        let end = self.stopped.unwrap_or_else(Instant::now);
        let mut idle = self.idle;
        if self.stopped.is_none() && self.in_flight < self.cap {
            idle += end - self.last;
        }
        let total = (end - self.start).as_secs_f64();
        if total <= 0.0 {
            0.0
        } else {
            idle.as_secs_f64() / total
        }
    }
}

struct Flight {
    group: u64,
    index: usize,
    server: usize,
    job_id: JobId,
}

type RolloutReply = (u64, Result<JobReport, ClientError>);

/// Plays the trainer: turns workload prompts into rollout groups and
/// collects informative ones from one or more rollout servers.
#[derive(Debug)]
pub struct Trainer {
    servers: Vec<RolloutClient>,
    workload: Arc<Workload>,
    cursor: usize,
    next_group: u64,
    next_job: u64,
    iteration: u64,
    tolerance: f64,
    max_waves: usize,
    ledger: Ledger,
    started: Instant,
    run_tag: String,
}

impl Trainer {
    pub fn new(servers: Vec<RolloutClient>, workload: Workload) -> Self {
        assert!(!servers.is_empty(), "a trainer needs at least one rollout server");
        Self {
            servers,
            workload: Arc::new(workload),
            cursor: 0,
            next_group: 0,
            next_job: 0,
            iteration: 0,
            tolerance: 0.0,
            max_waves: DEFAULT_MAX_WAVES,
            ledger: Ledger::in_memory(),
            started: Instant::now(),
            run_tag: format!("{:08x}", rand::random::<u32>()),
        }
    }

    pub fn with_ledger(mut self, ledger: Ledger) -> Self {
        self.ledger = ledger;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_waves(mut self, max_waves: usize) -> Self {
        self.max_waves = max_waves;
        self
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Next prompt from the workload, cycling with an epoch suffix.
    fn open_group(&mut self) -> PromptGroup {
        let len = self.workload.prompts.len();
        let (source, epoch) = (self.cursor % len, self.cursor / len);
        self.cursor += 1;
        let p = &self.workload.prompts[source];
        let id = if epoch == 0 { p.prompt_id.clone() } else { format!("{}@{epoch}", p.prompt_id) };
        PromptGroup::new(id, source, p.payload.clone(), self.workload.rollouts_per_prompt)
    }

    fn check_plan(&self, plan: &IterationPlan) -> Result<(), TrainerError> {
        if plan.target_informative == 0 {
            return Err(TrainerError::InvalidPlan("target_informative must be at least 1".into()));
        }
        if plan.concurrency_cap == 0 {
            return Err(TrainerError::InvalidPlan("concurrency_cap must be at least 1".into()));
        }
        Ok(())
    }

    fn launch(
        &mut self,
        set: &mut JoinSet<RolloutReply>,
        flights: &mut HashMap<u64, Flight>,
        load: &mut [usize],
        group: &PromptGroup,
        group_key: u64,
        index: usize,
    ) {
        let server = (0..load.len()).min_by_key(|&i| (load[i], i)).expect("at least one server");
        load[server] += 1;
        let flight_key = self.next_job;
        self.next_job += 1;
        let job_id = format!("{}#{index}-{}-{flight_key}", group.prompt_id, self.run_tag);
        let req = self.workload.request(group.source, index, job_id.clone());
        let client = self.servers[server].clone();
        set.spawn(async move { (flight_key, client.process(&req).await) });
        flights.insert(flight_key, Flight { group: group_key, index, server, job_id: JobId::from(job_id) });
    }

    /// Records an outcome. Cancelled rollouts carry no observation.
    fn observe(&self, group: &mut PromptGroup, flight: &Flight, report: &JobReport) {
        let outcome = match report.status {
            JobStatus::Done => RolloutOutcome::Reward(report.reward.unwrap_or(0.0)),
            JobStatus::Failed => {
                RolloutOutcome::Error(report.error.as_ref().map_or_else(|| "failed".to_string(), |e| e.message.clone()))
            }
            _ => return,
        };
        let reward = match &outcome {
            RolloutOutcome::Reward(r) => Some(*r),
            RolloutOutcome::Error(_) => None,
        };
        if group.record(flight.index, outcome) {
            let record = LedgerRecord {
                iteration: self.iteration,
                prompt_id: group.prompt_id.clone(),
                rollout_index: flight.index,
                reward,
                wall_time: self.started.elapsed().as_secs_f64(),
                address: self.servers[flight.server].base_url().to_string(),
            };
            if let Err(e) = self.ledger.append(record) {
                warn!(error = %e, "ledger write failed");
            }
        }
    }

    fn informative(&self, group: &PromptGroup) -> bool {
        is_informative_with(group, self.tolerance).unwrap_or(false)
    }

    /// Baseline: request a full batch, wait for every rollout, filter, and
    /// repeat with fresh batches until enough prompts are informative.
    pub async fn run_iteration_batch(&mut self, plan: IterationPlan) -> Result<IterationResult, TrainerError> {
        self.check_plan(&plan)?;
        self.iteration += 1;
        let start = Instant::now();
        let mut meter = ActivityMeter::new(plan.concurrency_cap);
        let mut informative = Vec::new();
        let mut surplus = 0;
        let mut issued = 0;
        let mut waves = 0;
        let mut carry: VecDeque<PromptGroup> = plan.carryover.into();
        let mut load = vec![0usize; self.servers.len()];

        while informative.len() < plan.target_informative {
            if waves == self.max_waves {
                return Err(TrainerError::MaxWaves { waves, informative: informative.len() });
            }
            waves += 1;
            let mut groups: BTreeMap<u64, PromptGroup> = BTreeMap::new();
            while groups.len() < plan.target_informative {
                let mut g = carry.pop_front().unwrap_or_else(|| self.open_group());
                g.state = GroupState::InFlight;
                groups.insert(self.next_group, g);
                self.next_group += 1;
            }
            let mut todo: VecDeque<(u64, usize)> =
                groups.iter().flat_map(|(&key, g)| g.missing().into_iter().map(move |k| (key, k))).collect();
            let mut set = JoinSet::new();
            let mut flights = HashMap::new();
            loop {
                while flights.len() < plan.concurrency_cap {
                    let Some((key, k)) = todo.pop_front() else { break };
                    let g = groups[&key].clone();
                    self.launch(&mut set, &mut flights, &mut load, &g, key, k);
                    issued += 1;
                }
                meter.set(flights.len());
                let Some(joined) = set.join_next().await else { break };
                let (fk, reply) = joined.expect("rollout task panicked");
                let flight = flights.remove(&fk).expect("known flight");
                load[flight.server] -= 1;
                meter.set(flights.len());
                let report = reply?;
                let g = groups.get_mut(&flight.group).expect("known group");
                self.observe(g, &flight, &report);
            }
            for g in groups.into_values() {
                if self.informative(&g) {
                    if informative.len() < plan.target_informative {
                        informative.push(g);
                    } else {
                        surplus += 1;
                    }
                }
            }
            debug!(waves, informative = informative.len(), "batch wave done");
        }
        meter.stop();
        Ok(IterationResult {
            mode: Mode::Batch,
            informative_groups: informative,
            wall_time: start.elapsed(),
            rollouts_issued: issued,
            carried_over: Vec::new(),
            cancelled: 0,
            waves,
            idle_fraction: meter.idle_fraction(),
            surplus_discarded: surplus,
        })
    }

    /// Keeps the cap filled with rollouts, refilling as each finishes.
    /// Once the target is met, outstanding rollouts are cancelled (or
    /// awaited) and every unfinished group is carried over.
    pub async fn run_iteration_async(&mut self, plan: IterationPlan) -> Result<IterationResult, TrainerError> {
        self.check_plan(&plan)?;
        self.iteration += 1;
        let start = Instant::now();
        let mut meter = ActivityMeter::new(plan.concurrency_cap);
        let mut informative = Vec::new();
        let mut open: BTreeMap<u64, PromptGroup> = BTreeMap::new();
        let mut todo: VecDeque<(u64, usize)> = VecDeque::new();
        let mut finished_late = Vec::new();
        let mut issued = 0;
        let mut load = vec![0usize; self.servers.len()];

        for mut g in plan.carryover {
            let key = self.next_group;
            self.next_group += 1;
            if g.is_complete() {
                if self.informative(&g) && informative.len() < plan.target_informative {
                    informative.push(g);
                } else if self.informative(&g) {
                    finished_late.push(g);
                }
                continue;
            }
            g.state = GroupState::InFlight;
            todo.extend(g.missing().into_iter().map(|k| (key, k)));
            open.insert(key, g);
        }

        let mut reached = informative.len() >= plan.target_informative;
        if reached {
            meter.stop();
        }
        let mut set = JoinSet::new();
        let mut flights: HashMap<u64, Flight> = HashMap::new();
        let mut cancelled = 0;
        let mut cancels = JoinSet::new();

        loop {
            while !reached && flights.len() < plan.concurrency_cap {
                if todo.is_empty() {
                    let g = self.open_group();
                    let key = self.next_group;
                    self.next_group += 1;
                    todo.extend(g.missing().into_iter().map(|k| (key, k)));
                    open.insert(key, g);
                }
                let (key, k) = todo.pop_front().expect("just refilled");
                let g = open[&key].clone();
                self.launch(&mut set, &mut flights, &mut load, &g, key, k);
                issued += 1;
            }
            meter.set(flights.len());
            let Some(joined) = set.join_next().await else { break };
            let (fk, reply) = joined.expect("rollout task panicked");
            let flight = flights.remove(&fk).expect("known flight");
            load[flight.server] -= 1;
            meter.set(flights.len());
            let report = match reply {
                Ok(r) => r,
                Err(e) => {
                    set.abort_all();
                    return Err(e.into());
                }
            };
            let Some(g) = open.get_mut(&flight.group) else { continue };
            self.observe(g, &flight, &report);
            if g.is_complete() {
                let g = open.remove(&flight.group).expect("present");
                if !self.informative(&g) {
                    continue;
                }
                if reached {
                    finished_late.push(g);
                    continue;
                }
                informative.push(g);
                if informative.len() >= plan.target_informative {
                    reached = true;
                    meter.stop();
                    if plan.early_termination {
                        cancelled = flights.len();
                        for f in flights.values() {
                            let client = self.servers[f.server].clone();
                            let id = f.job_id.clone();
                            cancels.spawn(async move { cancel_with_retry(&client, &id).await });
                        }
                    }
                }
            }
        }
        while cancels.join_next().await.is_some() {}

        let mut carried_over: Vec<PromptGroup> = open.into_values().collect();
        carried_over.extend(finished_late);
        for g in &mut carried_over {
            g.state = GroupState::CarriedOver;
        }
        Ok(IterationResult {
            mode: Mode::Async,
            informative_groups: informative,
            wall_time: start.elapsed(),
            rollouts_issued: issued,
            carried_over,
            cancelled,
            waves: 1,
            idle_fraction: meter.idle_fraction(),
            surplus_discarded: 0,
        })
    }

    pub async fn run_iteration(&mut self, mode: Mode, plan: IterationPlan) -> Result<IterationResult, TrainerError> {
        match mode {
            Mode::Batch => self.run_iteration_batch(plan).await,
            Mode::Async => self.run_iteration_async(plan).await,
        }
    }
}

/// A cancel can overtake its /process request; retry briefly on 404.
async fn cancel_with_retry(client: &RolloutClient, id: &JobId) {
    for _ in 0..100 {
        match client.cancel(id).await {
            Err(e) if e.status() == Some(404) => tokio::time::sleep(Duration::from_millis(10)).await,
            _ => return,
        }
    }
}
