//! Simulated-time driver: a discrete-event queue feeding the scheduler.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use super::metrics::StepMetrics;
use super::scheduler::{Action, PassEstimate, RolloutTask, Scheduler, WorkerInterval};
use super::workload::{SyntheticWorkload, TaskContent, TaskSource};
use super::SimConfig;
use crate::error::{Error, Result};
use crate::model::pass_rate;
use crate::sampler::GroupClass;

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    RolloutDone,
    RewardDone { server: usize },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            Self::RewardDone { .. } => 0,
            Self::RolloutDone => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    launch_index: u64,
    kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest event; ties go to the
    // lower launch index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.launch_index.cmp(&self.launch_index))
            .then(other.kind.rank().cmp(&self.kind.rank()))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Runs a fresh scheduler to finalization. Returns the content of every
/// launched task, indexed by launch index.
pub fn drive<S: TaskSource + ?Sized>(
    scheduler: &mut Scheduler,
    source: &mut S,
    step: usize,
    start: f64,
    budget: f64,
) -> Result<Vec<TaskContent>> {
    let mut contents: Vec<TaskContent> = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut aborted = HashSet::new();
    let mut now = start;
    let mut pending = scheduler.start(start)?;
    loop {
        for action in pending.drain(..) {
            match action {
                Action::Launch { launch_index } => {
                    let content = source.launch(step, launch_index)?;
                    scheduler.set_problem(launch_index, content.problem_id.clone())?;
                    contents.push(content);
                }
                Action::StartRollout { launch_index, .. } => heap.push(Event {
                    time: now + contents[launch_index as usize].rollout_time,
                    launch_index,
                    kind: EventKind::RolloutDone,
                }),
                Action::StartReward { launch_index, server } => heap.push(Event {
                    time: now + contents[launch_index as usize].reward_time,
                    launch_index,
                    kind: EventKind::RewardDone { server },
                }),
                Action::Abort { launch_index } => {
                    aborted.insert(launch_index);
                }
                Action::Finalize { .. } => return Ok(contents),
            }
        }
        let event = loop {
            let Some(e) = heap.pop() else {
                return Err(Error::Unreachable { budget });
            };
            if !aborted.contains(&e.launch_index) {
                break e;
            }
        };
        if event.time - start > budget {
            return Err(Error::Unreachable { budget });
        }
        now = event.time;
        pending = match event.kind {
            EventKind::RolloutDone => scheduler.on_rollout_complete(event.launch_index, now)?,
            EventKind::RewardDone { server } => {
                let class = source.complete(&contents[event.launch_index as usize])?;
                scheduler.on_reward_complete(event.launch_index, server, class, now)?
            }
        };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub launch_index: u64,
    pub problem_id: String,
    pub pass_rate: f64,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub metrics: StepMetrics,
    pub batch: Vec<BatchEntry>,
    pub batch_contents: Vec<TaskContent>,
    pub tasks: Vec<RolloutTask>,
    pub intervals: Vec<WorkerInterval>,
    /// Pass estimate handed to the next step.
    pub estimate: PassEstimate,
}

pub(crate) fn finish_step(
    scheduler: &Scheduler,
    contents: &[TaskContent],
    mode: super::Mode,
    seed: u64,
    step: usize,
    train_update_time: f64,
) -> Result<StepReport> {
    let fin = scheduler
        .finalization()
        .ok_or_else(|| Error::InvalidArgument("step did not finalize".into()))?;
    let mut batch = Vec::with_capacity(fin.batch.len());
    let mut batch_contents = Vec::with_capacity(fin.batch.len());
    let mut zero_gradient = 0;
    for &i in &fin.batch {
        let c = &contents[i as usize];
        let rate = pass_rate(&c.group)?;
        if rate == 0.0 || rate == 1.0 {
            zero_gradient += 1;
        }
        batch.push(BatchEntry {
            launch_index: i,
            problem_id: c.problem_id.clone(),
            pass_rate: rate,
        });
        batch_contents.push(c.clone());
    }
    let metrics = StepMetrics::from_scheduler(scheduler, mode, seed, step, train_update_time, zero_gradient);
    Ok(StepReport {
        metrics,
        batch,
        batch_contents,
        tasks: scheduler.tasks().to_vec(),
        intervals: scheduler.intervals().to_vec(),
        estimate: scheduler.estimate(),
    })
}

/// A multi-step simulation. The pass estimate and the sampler state carry
/// over from one step to the next.
#[derive(Debug)]
pub struct Simulation<S: TaskSource = SyntheticWorkload> {
    config: SimConfig,
    source: S,
    estimate: PassEstimate,
    clock: f64,
    step: usize,
}

impl Simulation<SyntheticWorkload> {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let source = SyntheticWorkload::new(
            config.workload.clone(),
            config.group_size,
            config.sampler.clone(),
            config.seed,
        )?;
        Ok(Self::with_source(config, source))
    }
}

impl<S: TaskSource> Simulation<S> {
    pub fn with_source(config: SimConfig, source: S) -> Self {
        let estimate = config.demand.prior;
        Self {
            config,
            source,
            estimate,
            clock: 0.0,
            step: 0,
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    pub fn source_mut(&mut self) -> &mut S {
        &mut self.source
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn run_step(&mut self) -> Result<StepReport> {
        let cfg = &self.config;
        let mut scheduler = Scheduler::new(
            cfg.mode.policy(cfg),
            cfg.batch_size,
            cfg.num_workers,
            cfg.demand,
            self.estimate,
        )?;
        self.source.begin_step(self.step);
        let contents = drive(&mut scheduler, &mut self.source, self.step, self.clock, cfg.time_budget)?;
        let report = finish_step(&scheduler, &contents, cfg.mode, cfg.seed, self.step, cfg.train_update_time)?;
        self.estimate = report.estimate;
        self.clock += report.metrics.wall_time;
        self.step += 1;
        Ok(report)
    }

    pub fn run(&mut self, steps: usize) -> Result<Vec<StepReport>> {
        (0..steps).map(|_| self.run_step()).collect()
    }
}

/// One step of a fresh simulation.
pub fn run_step(config: &SimConfig) -> Result<StepReport> {
    Simulation::new(config.clone())?.run_step()
}

/// Replays fixed task contents in launch order; the classification comes
/// from each group's rewards. Used for hand-traced scenarios.
#[derive(Debug, Clone)]
pub struct ScriptedSource {
    contents: Vec<TaskContent>,
}

impl ScriptedSource {
    pub fn new(contents: Vec<TaskContent>) -> Self {
        Self { contents }
    }
}

impl TaskSource for ScriptedSource {
    fn begin_step(&mut self, _step: usize) {}

    fn launch(&mut self, _step: usize, launch_index: u64) -> Result<TaskContent> {
        self.contents
            .get(launch_index as usize)
            .cloned()
            .ok_or(Error::DatasetExhausted)
    }

    fn complete(&mut self, content: &TaskContent) -> Result<GroupClass> {
        crate::sampler::classify_group(&content.group)
    }
}
