//! The scheduler core: a pure state machine over rollout tasks.
//!
//! Drivers feed it completion events in time order and carry out the
//! actions it returns. It never looks at a clock or a task's duration; it
//! only records the timestamps it is handed.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{GroupClass, PassStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Queued,
    Rolling,
    Rewarding,
    Valid,
    Filtered,
    Aborted,
}

impl TaskState {
    pub fn name(self) -> &'static str {
        match self {
            Self::Queued => "queued",
            Self::Rolling => "rolling",
            Self::Rewarding => "rewarding",
            Self::Valid => "valid",
            Self::Filtered => "filtered",
            Self::Aborted => "aborted",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Valid | Self::Filtered | Self::Aborted)
    }

    /// Finished rollout and reward (aborted tasks are not completed).
    pub fn is_completed(self) -> bool {
        matches!(self, Self::Valid | Self::Filtered)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTask {
    pub launch_index: u64,
    pub problem_id: Option<String>,
    pub worker: Option<usize>,
    pub launched_at: f64,
    pub start: Option<f64>,
    pub rollout_end: Option<f64>,
    pub end: Option<f64>,
    pub state: TaskState,
}

impl RolloutTask {
    pub fn rollout_time(&self) -> Option<f64> {
        Some(self.rollout_end? - self.start?)
    }
}

/// When new rollouts are launched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LaunchPolicy {
    /// Launch `round_size` tasks, wait for all of them, repeat.
    Rounds { round_size: usize },
    /// Launch on demand whenever a worker is free.
    Continuous,
}

/// How rewards are computed relative to rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RewardDispatch {
    /// One reward processor that starts only once every rollout of the
    /// current round has finished.
    AfterBarrier,
    /// One reward processor inside the control loop: while it runs, no new
    /// rollouts are launched.
    Blocking,
    /// A pool of reward servers fed as soon as each rollout finishes.
    Async { servers: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulePolicy {
    pub launch: LaunchPolicy,
    pub reward: RewardDispatch,
    pub dynamic_sampling: bool,
    pub early_termination: bool,
}

/// Smoothed current-step fractions of zero-pass and perfect-pass groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassEstimate {
    pub p0: f64,
    pub p1: f64,
}

impl Default for PassEstimate {
    fn default() -> Self {
        Self { p0: 0.25, p1: 0.25 }
    }
}

impl PassEstimate {
    /// Fraction of groups expected to be valid.
    pub fn pass_through(&self) -> f64 {
        (1.0 - self.p0 - self.p1).clamp(0.0, 1.0)
    }

    /// Exponential smoothing: `p <- smoothing * p + (1 - smoothing) * x`.
    pub fn observe(&mut self, class: GroupClass, smoothing: f64) {
        let zero = f64::from(u8::from(class == GroupClass::DiscardZero));
        let perfect = f64::from(u8::from(class == GroupClass::RouteToEasyPool));
        self.p0 = smoothing * self.p0 + (1.0 - smoothing) * zero;
        self.p1 = smoothing * self.p1 + (1.0 - smoothing) * perfect;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandConfig {
    /// Weight kept on the previous estimate at each observation.
    pub smoothing: f64,
    /// Lower bound on the pass-through used as a divisor.
    pub floor: f64,
    /// Estimate used before any group has completed.
    pub prior: PassEstimate,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self {
            smoothing: 0.9,
            floor: 0.05,
            prior: PassEstimate::default(),
        }
    }
}

/// Number of new rollouts to launch so the expected valid count reaches
/// `batch_size`, capped by `free_workers`.
pub fn estimate_launch_demand(
    valid_count: usize,
    in_flight: usize,
    estimate: &PassEstimate,
    batch_size: usize,
    floor: f64,
    free_workers: usize,
) -> usize {
    let q = estimate.pass_through();
    let expected = valid_count as f64 + in_flight as f64 * q;
    let need = batch_size as f64 - expected;
    if need <= 1e-9 {
        return 0;
    }
    let demand = (need / q.max(floor) - 1e-9).ceil();
    (demand as usize).min(free_workers)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EarlyTermination {
    Continue,
    Finalize { batch: Vec<u64>, abort: Vec<u64> },
}

/// FIFO rule: take the first `batch_size` valid tasks by launch index; the
/// batch is final once every task launched no later than the last of them
/// has completed. Incomplete tasks launched after it are aborted.
pub fn early_termination_check(tasks: &[RolloutTask], batch_size: usize) -> EarlyTermination {
    let mut order: Vec<&RolloutTask> = tasks.iter().collect();
    order.sort_by_key(|t| t.launch_index);
    let batch: Vec<u64> = order
        .iter()
        .filter(|t| t.state == TaskState::Valid)
        .take(batch_size)
        .map(|t| t.launch_index)
        .collect();
    if batch.len() < batch_size {
        return EarlyTermination::Continue;
    }
    let last = batch.last().copied().unwrap_or(0);
    let prefix_done = order
        .iter()
        .filter(|t| t.launch_index <= last)
        .all(|t| t.state.is_completed());
    if !prefix_done {
        return EarlyTermination::Continue;
    }
    let abort = order
        .iter()
        .filter(|t| t.launch_index > last && !t.state.is_terminal())
        .map(|t| t.launch_index)
        .collect();
    EarlyTermination::Finalize { batch, abort }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// A new task exists; the driver decides its content.
    Launch { launch_index: u64 },
    StartRollout { launch_index: u64, worker: usize },
    StartReward { launch_index: u64, server: usize },
    Abort { launch_index: u64 },
    Finalize { batch: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finalization {
    pub time: f64,
    pub batch: Vec<u64>,
    pub aborted: Vec<u64>,
}

/// One interval a worker spent generating. `completed` is false for
/// rollouts cut short by an abort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerInterval {
    pub worker: usize,
    pub launch_index: u64,
    pub start: f64,
    pub end: f64,
    pub completed: bool,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    policy: SchedulePolicy,
    batch_size: usize,
    num_workers: usize,
    demand: DemandConfig,
    estimate: PassEstimate,
    tasks: Vec<RolloutTask>,
    free_workers: BTreeSet<usize>,
    rollout_queue: VecDeque<u64>,
    free_servers: BTreeSet<usize>,
    reward_queue: VecDeque<u64>,
    reward_gate_open: bool,
    round_start: u64,
    valid: BTreeSet<u64>,
    stats: PassStats,
    intervals: Vec<WorkerInterval>,
    started_at: f64,
    finalization: Option<Finalization>,
}

impl Scheduler {
    pub fn new(
        policy: SchedulePolicy,
        batch_size: usize,
        num_workers: usize,
        demand: DemandConfig,
        estimate: PassEstimate,
    ) -> Result<Self> {
        if batch_size == 0 || num_workers == 0 {
            return Err(Error::InvalidConfig("batch size and workers must be positive".into()));
        }
        let servers = match policy.reward {
            RewardDispatch::Async { servers } if servers == 0 => {
                return Err(Error::InvalidConfig("async reward needs at least one server".into()))
            }
            RewardDispatch::Async { servers } => servers,
            _ => 1,
        };
        if let LaunchPolicy::Rounds { round_size: 0 } = policy.launch {
            return Err(Error::InvalidConfig("round size must be positive".into()));
        }
        Ok(Self {
            policy,
            batch_size,
            num_workers,
            demand,
            estimate,
            tasks: Vec::new(),
            free_workers: (0..num_workers).collect(),
            rollout_queue: VecDeque::new(),
            free_servers: (0..servers).collect(),
            reward_queue: VecDeque::new(),
            reward_gate_open: !matches!(policy.reward, RewardDispatch::AfterBarrier),
            round_start: 0,
            valid: BTreeSet::new(),
            stats: PassStats::default(),
            intervals: Vec::new(),
            started_at: 0.0,
            finalization: None,
        })
    }

    pub fn policy(&self) -> &SchedulePolicy {
        &self.policy
    }

    pub fn tasks(&self) -> &[RolloutTask] {
        &self.tasks
    }

    pub fn task(&self, launch_index: u64) -> Option<&RolloutTask> {
        self.tasks.get(launch_index as usize)
    }

    pub fn estimate(&self) -> PassEstimate {
        self.estimate
    }

    pub fn stats(&self) -> PassStats {
        self.stats
    }

    pub fn valid_count(&self) -> usize {
        self.valid.len()
    }

    pub fn num_workers(&self) -> usize {
        self.num_workers
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn started_at(&self) -> f64 {
        self.started_at
    }

    pub fn finalization(&self) -> Option<&Finalization> {
        self.finalization.as_ref()
    }

    pub fn intervals(&self) -> &[WorkerInterval] {
        &self.intervals
    }

    pub fn set_problem(&mut self, launch_index: u64, problem_id: impl Into<String>) -> Result<()> {
        let task = self.task_mut(launch_index)?;
        task.problem_id = Some(problem_id.into());
        Ok(())
    }

    /// Tasks rolling or waiting on a reward.
    pub fn in_flight(&self) -> usize {
        self.tasks.iter().filter(|t| !t.state.is_terminal()).count()
    }

    fn task_mut(&mut self, launch_index: u64) -> Result<&mut RolloutTask> {
        self.tasks
            .get_mut(launch_index as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("no task {launch_index}")))
    }

    fn transition(&mut self, launch_index: u64, from: TaskState, to: TaskState) -> Result<()> {
        let task = self.task_mut(launch_index)?;
        if task.state != from {
            return Err(Error::InvalidTransition {
                task: launch_index,
                from: task.state.name(),
                to: to.name(),
            });
        }
        task.state = to;
        Ok(())
    }

    pub fn start(&mut self, now: f64) -> Result<Vec<Action>> {
        if !self.tasks.is_empty() {
            return Err(Error::InvalidArgument("scheduler already started".into()));
        }
        self.started_at = now;
        let mut actions = Vec::new();
        match self.policy.launch {
            LaunchPolicy::Rounds { round_size } => self.launch(round_size, now, &mut actions),
            LaunchPolicy::Continuous => self.launch_on_demand(now, &mut actions),
        }
        Ok(actions)
    }

    fn launch(&mut self, n: usize, now: f64, actions: &mut Vec<Action>) {
        for _ in 0..n {
            let launch_index = self.tasks.len() as u64;
            self.tasks.push(RolloutTask {
                launch_index,
                problem_id: None,
                worker: None,
                launched_at: now,
                start: None,
                rollout_end: None,
                end: None,
                state: TaskState::Queued,
            });
            self.rollout_queue.push_back(launch_index);
            actions.push(Action::Launch { launch_index });
        }
        self.dispatch_rollouts(now, actions);
    }

    fn launch_on_demand(&mut self, now: f64, actions: &mut Vec<Action>) {
        let demand = estimate_launch_demand(
            self.valid.len(),
            self.in_flight(),
            &self.estimate,
            self.batch_size,
            self.demand.floor,
            self.free_workers.len(),
        );
        self.launch(demand, now, actions);
    }

    fn dispatch_rollouts(&mut self, now: f64, actions: &mut Vec<Action>) {
        while !self.rollout_queue.is_empty() {
            let Some(worker) = self.free_workers.pop_first() else {
                break;
            };
            let launch_index = self.rollout_queue.pop_front().expect("nonempty queue");
            let task = &mut self.tasks[launch_index as usize];
            task.state = TaskState::Rolling;
            task.worker = Some(worker);
            task.start = Some(now);
            actions.push(Action::StartRollout { launch_index, worker });
        }
    }

    fn dispatch_rewards(&mut self, actions: &mut Vec<Action>) {
        if !self.reward_gate_open {
            return;
        }
        while !self.reward_queue.is_empty() {
            let Some(server) = self.free_servers.pop_first() else {
                break;
            };
            let launch_index = self.reward_queue.pop_front().expect("nonempty queue");
            actions.push(Action::StartReward { launch_index, server });
        }
    }

    fn ensure_running(&self) -> Result<()> {
        if self.finalization.is_some() {
            return Err(Error::InvalidArgument("step already finalized".into()));
        }
        Ok(())
    }

    pub fn on_rollout_complete(&mut self, launch_index: u64, now: f64) -> Result<Vec<Action>> {
        self.ensure_running()?;
        self.transition(launch_index, TaskState::Rolling, TaskState::Rewarding)?;
        let task = &mut self.tasks[launch_index as usize];
        task.rollout_end = Some(now);
        let worker = task.worker.expect("rolling task has a worker");
        let start = task.start.expect("rolling task has a start");
        self.intervals.push(WorkerInterval {
            worker,
            launch_index,
            start,
            end: now,
            completed: true,
        });
        self.free_workers.insert(worker);

        let mut actions = Vec::new();
        self.reward_queue.push_back(launch_index);
        if let RewardDispatch::AfterBarrier = self.policy.reward {
            let round_rolled = self.tasks[self.round_start as usize..]
                .iter()
                .all(|t| t.rollout_end.is_some());
            if round_rolled {
                self.reward_gate_open = true;
            }
        }
        self.dispatch_rewards(&mut actions);
        self.dispatch_rollouts(now, &mut actions);
        if self.policy.launch == LaunchPolicy::Continuous
            && matches!(self.policy.reward, RewardDispatch::Async { .. })
        {
            self.launch_on_demand(now, &mut actions);
        }
        Ok(actions)
    }

    pub fn on_reward_complete(
        &mut self,
        launch_index: u64,
        server: usize,
        class: GroupClass,
        now: f64,
    ) -> Result<Vec<Action>> {
        self.ensure_running()?;
        let valid = class == GroupClass::Keep || !self.policy.dynamic_sampling;
        let to = if valid { TaskState::Valid } else { TaskState::Filtered };
        self.transition(launch_index, TaskState::Rewarding, to)?;
        self.tasks[launch_index as usize].end = Some(now);
        self.free_servers.insert(server);
        self.stats.record(class);
        self.estimate.observe(class, self.demand.smoothing);
        if valid {
            self.valid.insert(launch_index);
        }

        let mut actions = Vec::new();
        self.dispatch_rewards(&mut actions);
        match self.policy.launch {
            LaunchPolicy::Continuous => {
                if self.policy.early_termination {
                    if let EarlyTermination::Finalize { batch, abort } =
                        early_termination_check(&self.tasks, self.batch_size)
                    {
                        self.finalize(batch, abort, now, &mut actions);
                        return Ok(actions);
                    }
                } else if self.valid.len() >= self.batch_size && self.in_flight() == 0 {
                    let batch = self.valid.iter().take(self.batch_size).copied().collect();
                    self.finalize(batch, Vec::new(), now, &mut actions);
                    return Ok(actions);
                }
                self.launch_on_demand(now, &mut actions);
            }
            LaunchPolicy::Rounds { round_size } => {
                let round_done = self.tasks[self.round_start as usize..]
                    .iter()
                    .all(|t| t.state.is_terminal());
                if round_done {
                    if !self.policy.dynamic_sampling || self.valid.len() >= self.batch_size {
                        let take = if self.policy.dynamic_sampling {
                            self.batch_size
                        } else {
                            self.valid.len()
                        };
                        let batch = self.valid.iter().take(take).copied().collect();
                        self.finalize(batch, Vec::new(), now, &mut actions);
                    } else {
                        self.round_start = self.tasks.len() as u64;
                        if matches!(self.policy.reward, RewardDispatch::AfterBarrier) {
                            self.reward_gate_open = false;
                        }
                        self.launch(round_size, now, &mut actions);
                    }
                }
            }
        }
        Ok(actions)
    }

    fn finalize(&mut self, batch: Vec<u64>, abort: Vec<u64>, now: f64, actions: &mut Vec<Action>) {
        for &i in &abort {
            let task = &mut self.tasks[i as usize];
            if task.state == TaskState::Rolling {
                self.intervals.push(WorkerInterval {
                    worker: task.worker.expect("rolling task has a worker"),
                    launch_index: i,
                    start: task.start.expect("rolling task has a start"),
                    end: now,
                    completed: false,
                });
            }
            task.state = TaskState::Aborted;
            task.end = Some(now);
            actions.push(Action::Abort { launch_index: i });
        }
        actions.push(Action::Finalize { batch: batch.clone() });
        self.finalization = Some(Finalization {
            time: now,
            batch,
            aborted: abort,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(i: u64, state: TaskState) -> RolloutTask {
        RolloutTask {
            launch_index: i,
            problem_id: None,
            worker: None,
            launched_at: 0.0,
            start: None,
            rollout_end: None,
            end: None,
            state,
        }
    }

    #[test]
    fn demand_examples() {
        let est = PassEstimate { p0: 0.25, p1: 0.25 };
        assert_eq!(estimate_launch_demand(4, 0, &est, 4, 0.05, 100), 0);
        assert_eq!(estimate_launch_demand(2, 2, &est, 4, 0.05, 100), 2);
        let hopeless = PassEstimate { p0: 0.6, p1: 0.4 };
        assert_eq!(estimate_launch_demand(0, 0, &hopeless, 4, 0.05, 1000), 80);
        assert_eq!(estimate_launch_demand(0, 0, &hopeless, 4, 0.05, 7), 7);
    }

    #[test]
    fn fifo_trace() {
        use TaskState::*;
        let mut tasks = vec![
            task(0, Rolling),
            task(1, Valid),
            task(2, Valid),
            task(3, Rolling),
        ];
        assert_eq!(early_termination_check(&tasks, 2), EarlyTermination::Continue);
        tasks[0].state = Filtered;
        assert_eq!(
            early_termination_check(&tasks, 2),
            EarlyTermination::Finalize {
                batch: vec![1, 2],
                abort: vec![3]
            }
        );
        let done = vec![task(0, Valid), task(1, Filtered), task(2, Valid)];
        assert_eq!(
            early_termination_check(&done, 2),
            EarlyTermination::Finalize {
                batch: vec![0, 2],
                abort: vec![]
            }
        );
    }

    #[test]
    fn smoothing_update() {
        let mut e = PassEstimate::default();
        e.observe(GroupClass::DiscardZero, 0.5);
        assert_eq!((e.p0, e.p1), (0.625, 0.125));
        assert_eq!(e.pass_through(), 0.25);
    }

    #[test]
    fn rejects_bad_transitions() {
        let policy = SchedulePolicy {
            launch: LaunchPolicy::Continuous,
            reward: RewardDispatch::Async { servers: 1 },
            dynamic_sampling: true,
            early_termination: true,
        };
        let mut s = Scheduler::new(policy, 1, 1, DemandConfig::default(), PassEstimate::default())
            .unwrap();
        s.start(0.0).unwrap();
        assert!(matches!(
            s.on_reward_complete(0, 0, GroupClass::Keep, 1.0),
            Err(Error::InvalidTransition { .. })
        ));
        s.on_rollout_complete(0, 1.0).unwrap();
        assert!(s.on_rollout_complete(0, 1.0).is_err());
    }
}
