use serde::{Deserialize, Serialize};

use super::scheduler::{Scheduler, TaskState};
use super::Mode;

/// Per-step accounting of one rollout + reward phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub mode: Mode,
    pub seed: u64,
    pub step: usize,
    pub num_workers: usize,
    pub batch_size: usize,
    /// Step start to batch finalization, simulated seconds.
    pub phase_time: f64,
    pub train_update_time: f64,
    pub wall_time: f64,
    /// Worker-seconds spent on rollouts that ran to completion.
    pub gpu_busy_time: f64,
    /// Everything else, including time spent on rollouts that were aborted.
    pub gpu_idle_time: f64,
    pub gpu_idle_ratio: f64,
    pub launched: usize,
    pub valid_generated: usize,
    pub filtered: usize,
    pub aborted: usize,
    /// Batch groups whose pass rate is 0 or 1.
    pub zero_gradient_in_batch: usize,
    /// Excess valid samples over the batch size, relative to the batch size.
    pub sample_waste_ratio: f64,
    /// Excess valid samples relative to all valid samples generated.
    pub sample_waste_ratio_of_generated: f64,
}

impl StepMetrics {
    pub(crate) fn from_scheduler(
        scheduler: &Scheduler,
        mode: Mode,
        seed: u64,
        step: usize,
        train_update_time: f64,
        zero_gradient_in_batch: usize,
    ) -> Self {
        let fin = scheduler.finalization().expect("finalized scheduler");
        let phase_time = fin.time - scheduler.started_at();
        let tasks = scheduler.tasks();
        let gpu_busy_time: f64 = tasks.iter().filter_map(|t| t.rollout_time()).sum();
        let capacity = scheduler.num_workers() as f64 * phase_time;
        let gpu_idle_time = (capacity - gpu_busy_time).max(0.0);
        let count = |s: TaskState| tasks.iter().filter(|t| t.state == s).count();
        let batch_size = fin.batch.len();
        let dynamic = scheduler.policy().dynamic_sampling;
        let valid_generated = if dynamic { count(TaskState::Valid) } else { batch_size };
        let excess = valid_generated.saturating_sub(batch_size) as f64;
        Self {
            mode,
            seed,
            step,
            num_workers: scheduler.num_workers(),
            batch_size,
            phase_time,
            train_update_time,
            wall_time: phase_time + train_update_time,
            gpu_busy_time,
            gpu_idle_time,
            gpu_idle_ratio: if capacity > 0.0 { gpu_idle_time / capacity } else { 0.0 },
            launched: tasks.len(),
            valid_generated,
            filtered: count(TaskState::Filtered),
            aborted: count(TaskState::Aborted),
            zero_gradient_in_batch,
            sample_waste_ratio: excess / batch_size.max(1) as f64,
            sample_waste_ratio_of_generated: if valid_generated > 0 {
                excess / valid_generated as f64
            } else {
                0.0
            },
        }
    }
}
