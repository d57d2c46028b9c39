//! Wall-clock driver. Rollouts and reward jobs run on their own threads and
//! report back over a channel; the scheduler sees completions in arrival
//! order, so results are not reproducible run to run.

use std::collections::HashSet;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::scheduler::{Action, PassEstimate, Scheduler};
use super::sim::{finish_step, StepReport};
use super::workload::{TaskContent, TaskSource};
use super::SimConfig;
use crate::error::{Error, Result};
use crate::sampler::classify_group;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiveOptions {
    /// Real seconds slept per simulated second of work.
    pub time_scale: f64,
    /// Give up when no completion arrives for this long.
    pub stall_timeout: Duration,
}

impl Default for LiveOptions {
    fn default() -> Self {
        Self {
            time_scale: 1e-3,
            stall_timeout: Duration::from_secs(30),
        }
    }
}

enum Done {
    Rollout(u64),
    Reward(u64, usize),
}

fn sleep_scaled(seconds: f64, scale: f64) {
    let real = (seconds * scale).max(0.0);
    if real > 0.0 {
        thread::sleep(Duration::from_secs_f64(real));
    }
}

/// Runs one step against real time. Timestamps in the report are elapsed
/// real seconds divided by `time_scale`, so they are comparable to
/// simulated seconds.
pub fn run_live_step<S: TaskSource>(
    config: &SimConfig,
    source: &mut S,
    estimate: PassEstimate,
    step: usize,
    options: LiveOptions,
) -> Result<StepReport> {
    config.validate()?;
    if !(options.time_scale > 0.0) {
        return Err(Error::InvalidConfig("time_scale must be positive".into()));
    }
    let mut scheduler = Scheduler::new(
        config.mode.policy(config),
        config.batch_size,
        config.num_workers,
        config.demand,
        estimate,
    )?;
    source.begin_step(step);
    let origin = Instant::now();
    let now = || origin.elapsed().as_secs_f64() / options.time_scale;
    let (tx, rx) = mpsc::channel::<Done>();
    let mut contents: Vec<TaskContent> = Vec::new();
    let mut aborted = HashSet::new();
    let mut pending = scheduler.start(0.0)?;
    'outer: loop {
        for action in pending.drain(..) {
            match action {
                Action::Launch { launch_index } => {
                    let content = source.launch(step, launch_index)?;
                    scheduler.set_problem(launch_index, content.problem_id.clone())?;
                    contents.push(content);
                }
                Action::StartRollout { launch_index, .. } => {
                    let tx = tx.clone();
                    let seconds = contents[launch_index as usize].rollout_time;
                    thread::spawn(move || {
                        sleep_scaled(seconds, options.time_scale);
                        let _ = tx.send(Done::Rollout(launch_index));
                    });
                }
                Action::StartReward { launch_index, server } => {
                    let tx = tx.clone();
                    let content = contents[launch_index as usize].clone();
                    thread::spawn(move || {
                        sleep_scaled(content.reward_time, options.time_scale);
                        // Scoring happens off the control loop.
                        let _ = classify_group(&content.group);
                        let _ = tx.send(Done::Reward(launch_index, server));
                    });
                }
                Action::Abort { launch_index } => {
                    aborted.insert(launch_index);
                }
                Action::Finalize { .. } => break 'outer,
            }
        }
        let done = rx
            .recv_timeout(options.stall_timeout)
            .map_err(|_| Error::Unreachable {
                budget: options.stall_timeout.as_secs_f64() / options.time_scale,
            })?;
        let t = now();
        pending = match done {
            Done::Rollout(i) if !aborted.contains(&i) => scheduler.on_rollout_complete(i, t)?,
            Done::Reward(i, server) if !aborted.contains(&i) => {
                let class = source.complete(&contents[i as usize])?;
                scheduler.on_reward_complete(i, server, class, t)?
            }
            _ => Vec::new(),
        };
    }
    finish_step(&scheduler, &contents, config.mode, config.seed, step, config.train_update_time)
}
