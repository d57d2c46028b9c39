use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::StepMetrics;
use super::scheduler::{DemandConfig, LaunchPolicy, RewardDispatch, SchedulePolicy, Scheduler};
use super::sim::{drive, finish_step, Simulation};
use super::workload::{SyntheticProblem, SyntheticWorkload, TaskContent, TaskSource};
use super::{Mode, SimConfig};
use crate::error::{Error, Result};
use crate::sampler::{classify_group, GroupClass, SamplerConfig};

/// One mode's figures aggregated over the simulated steps and normalized
/// against naive dynamic sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: Mode,
    pub wall_time: f64,
    pub phase_time: f64,
    pub gpu_idle_time: f64,
    pub overall_speedup: f64,
    pub rollout_speedup: f64,
    pub normalized_idle_time: f64,
    pub gpu_idle_ratio: f64,
    pub sample_waste_ratio: f64,
    pub sample_waste_ratio_of_generated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
    pub steps: Vec<StepMetrics>,
}

impl AblationResult {
    pub fn row(&self, mode: Mode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

struct Totals {
    wall: f64,
    phase: f64,
    idle: f64,
    capacity: f64,
    excess: f64,
    valid: f64,
    required: f64,
}

fn totals(steps: &[StepMetrics]) -> Totals {
    let mut t = Totals {
        wall: 0.0,
        phase: 0.0,
        idle: 0.0,
        capacity: 0.0,
        excess: 0.0,
        valid: 0.0,
        required: 0.0,
    };
    for s in steps {
        t.wall += s.wall_time;
        t.phase += s.phase_time;
        t.idle += s.gpu_idle_time;
        t.capacity += s.num_workers as f64 * s.phase_time;
        t.excess += s.valid_generated.saturating_sub(s.batch_size) as f64;
        t.valid += s.valid_generated as f64;
        t.required += s.batch_size as f64;
    }
    t
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

/// Runs every mode on the same seed and workload for `steps` steps and
/// normalizes against naive dynamic sampling (run as well if not listed).
pub fn run_ablation(base: &SimConfig, modes: &[Mode], steps: usize) -> Result<AblationResult> {
    if steps == 0 {
        return Err(Error::InvalidArgument("ablation needs at least one step".into()));
    }
    let mut all = modes.to_vec();
    if !all.contains(&Mode::NaiveDynamic) {
        all.push(Mode::NaiveDynamic);
    }
    let runs = all
        .iter()
        .map(|&m| Ok((m, Simulation::new(base.with_mode(m))?.run(steps)?)))
        .collect::<Result<Vec<_>>>()?;
    let metrics: Vec<(Mode, Vec<StepMetrics>)> = runs
        .into_iter()
        .map(|(m, reports)| (m, reports.into_iter().map(|r| r.metrics).collect()))
        .collect();
    let flat: Vec<StepMetrics> = metrics.iter().flat_map(|(_, s)| s.iter().cloned()).collect();
    let rows = ablation_rows(&flat, modes)?;
    let steps = metrics
        .into_iter()
        .filter(|(m, _)| modes.contains(m))
        .flat_map(|(_, s)| s)
        .collect();
    Ok(AblationResult {
        seed: base.seed,
        rows,
        steps,
    })
}

/// Table rows from the step metrics of one seed, normalized against the
/// naive dynamic-sampling steps, which must be present.
pub fn ablation_rows(steps: &[StepMetrics], modes: &[Mode]) -> Result<Vec<AblationRow>> {
    let of = |mode: Mode| -> Vec<StepMetrics> { steps.iter().filter(|s| s.mode == mode).cloned().collect() };
    let naive_steps = of(Mode::NaiveDynamic);
    if naive_steps.is_empty() {
        return Err(Error::InvalidArgument("ablation needs naive_dynamic steps to normalize against".into()));
    }
    let naive = totals(&naive_steps);
    modes
        .iter()
        .map(|&mode| {
            let mode_steps = of(mode);
            if mode_steps.is_empty() {
                return Err(Error::InvalidArgument(format!("no steps for mode {mode}")));
            }
            let t = totals(&mode_steps);
            Ok(AblationRow {
                mode,
                wall_time: t.wall,
                phase_time: t.phase,
                gpu_idle_time: t.idle,
                overall_speedup: ratio(naive.wall, t.wall),
                rollout_speedup: ratio(naive.phase, t.phase),
                normalized_idle_time: ratio(t.idle, naive.idle),
                gpu_idle_ratio: ratio(t.idle, t.capacity),
                sample_waste_ratio: ratio(t.excess, t.required),
                sample_waste_ratio_of_generated: ratio(t.excess, t.valid),
            })
        })
        .collect()
}

/// Independent ablations over several seeds, run in parallel.
pub fn run_seed_sweep(base: &SimConfig, modes: &[Mode], steps: usize, seeds: &[u64]) -> Result<Vec<AblationResult>> {
    seeds
        .par_iter()
        .map(|&seed| run_ablation(&base.with_seed(seed), modes, steps))
        .collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-mode medians of every column across a seed sweep.
pub fn summarize_sweep(results: &[AblationResult], modes: &[Mode]) -> Vec<AblationRow> {
    modes
        .iter()
        .map(|&mode| {
            let rows: Vec<&AblationRow> = results.iter().filter_map(|r| r.row(mode)).collect();
            let col = |f: fn(&AblationRow) -> f64| median(&mut rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            AblationRow {
                mode,
                wall_time: col(|r| r.wall_time),
                phase_time: col(|r| r.phase_time),
                gpu_idle_time: col(|r| r.gpu_idle_time),
                overall_speedup: col(|r| r.overall_speedup),
                rollout_speedup: col(|r| r.rollout_speedup),
                normalized_idle_time: col(|r| r.normalized_idle_time),
                gpu_idle_ratio: col(|r| r.gpu_idle_ratio),
                sample_waste_ratio: col(|r| r.sample_waste_ratio),
                sample_waste_ratio_of_generated: col(|r| r.sample_waste_ratio_of_generated),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub num_tasks: usize,
    pub naive: StepMetrics,
    pub streamed: StepMetrics,
    pub speedup: f64,
    /// Relative cut in idle ratio, `1 - streamed / naive`.
    pub idle_ratio_reduction: f64,
}

/// Walks a fixed problem list, one task per problem.
struct SweepSource<'a> {
    workload: &'a SyntheticWorkload,
    problems: &'a [SyntheticProblem],
}

impl TaskSource for SweepSource<'_> {
    fn begin_step(&mut self, _step: usize) {}

    fn launch(&mut self, step: usize, launch_index: u64) -> Result<TaskContent> {
        let problem = self
            .problems
            .get(launch_index as usize)
            .ok_or(Error::DatasetExhausted)?;
        self.workload
            .content_for(problem, crate::sampler::DrawSource::Active, step, launch_index)
    }

    fn complete(&mut self, content: &TaskContent) -> Result<GroupClass> {
        classify_group(&content.group)
    }
}

/// Validation pass: every problem is launched at once and scored once. The
/// naive baseline waits for all rollouts and then scores sequentially; the
/// streamed run hands each finished rollout to the reward servers at once.
/// `problems` defaults to a synthetic set drawn from the config.
pub fn run_validation(config: &SimConfig, problems: Option<&[SyntheticProblem]>) -> Result<ValidationReport> {
    config.validate()?;
    let mut workload_cfg = config.workload.clone();
    workload_cfg.num_problems = config.validation.num_tasks;
    workload_cfg.code_fraction = config.validation.code_fraction;
    let workload = SyntheticWorkload::new(workload_cfg, config.group_size, SamplerConfig::default(), config.seed)?;
    let problems = problems.unwrap_or(workload.problems());
    if problems.is_empty() {
        return Err(Error::EmptyInput("validation set".into()));
    }
    let n = problems.len();
    let run = |reward: RewardDispatch, mode: Mode| -> Result<StepMetrics> {
        let policy = SchedulePolicy {
            launch: LaunchPolicy::Rounds { round_size: n },
            reward,
            dynamic_sampling: false,
            early_termination: false,
        };
        let mut scheduler = Scheduler::new(policy, n, config.num_workers, DemandConfig::default(), config.demand.prior)?;
        let mut source = SweepSource {
            workload: &workload,
            problems,
        };
        let contents = drive(&mut scheduler, &mut source, 0, 0.0, config.time_budget)?;
        Ok(finish_step(&scheduler, &contents, mode, config.seed, 0, 0.0)?.metrics)
    };
    let naive = run(RewardDispatch::AfterBarrier, Mode::Static)?;
    let streamed = run(
        RewardDispatch::Async {
            servers: config.num_reward_servers,
        },
        Mode::Static,
    )?;
    Ok(ValidationReport {
        num_tasks: n,
        speedup: ratio(naive.phase_time, streamed.phase_time),
        idle_ratio_reduction: if naive.gpu_idle_ratio > 0.0 {
            1.0 - streamed.gpu_idle_ratio / naive.gpu_idle_ratio
        } else {
            0.0
        },
        naive,
        streamed,
    })
}
