//! Rollout engine: an event-driven scheduler with continuous rollout,
//! asynchronous reward computation and FIFO early termination, simulated
//! over a synthetic heavy-tailed workload with GPU-time accounting.

mod ablation;
mod live;
mod metrics;
mod scheduler;
mod sim;
mod workload;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ablation::{
    ablation_rows, median, run_ablation, run_seed_sweep, run_validation, summarize_sweep, AblationResult,
    AblationRow, ValidationReport,
};
pub use live::{run_live_step, LiveOptions};
pub use metrics::StepMetrics;
pub use scheduler::{
    early_termination_check, estimate_launch_demand, Action, DemandConfig, EarlyTermination,
    Finalization, LaunchPolicy, PassEstimate, RewardDispatch, RolloutTask, SchedulePolicy,
    Scheduler, TaskState, WorkerInterval,
};
pub(crate) use sim::finish_step;
pub use sim::{drive, run_step, BatchEntry, ScriptedSource, Simulation, StepReport};
pub use workload::{
    mix_seed, seeded_rng, LatencyModel, LengthModel, PassModel, SyntheticProblem, SyntheticWorkload,
    TaskContent, TaskSource, WorkloadConfig,
};

use crate::error::{Error, Result};
use crate::sampler::SamplerConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Scheduling variants compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One round of `B` tasks; every group enters the batch.
    Static,
    /// Rounds of `B` tasks with a barrier before rewards; repeat until `B`
    /// groups pass the filter.
    NaiveDynamic,
    /// Continuous rollout with rewards computed inside the control loop.
    Continuous,
    /// Continuous rollout with asynchronous rewards, no early termination.
    SeamlessMinusEarlyTerm,
    /// Continuous rollout, asynchronous rewards and FIFO early termination.
    Seamless,
    /// Continuous rollout and early termination with blocking rewards.
    SeamlessMinusAsync,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Static,
        Mode::NaiveDynamic,
        Mode::Continuous,
        Mode::SeamlessMinusEarlyTerm,
        Mode::Seamless,
        Mode::SeamlessMinusAsync,
    ];

    /// The rows of the ablation table, in display order.
    pub const TABLE: [Mode; 5] = [
        Mode::Static,
        Mode::NaiveDynamic,
        Mode::Continuous,
        Mode::SeamlessMinusEarlyTerm,
        Mode::Seamless,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Static => "static",
            Mode::NaiveDynamic => "naive_dynamic",
            Mode::Continuous => "continuous",
            Mode::SeamlessMinusEarlyTerm => "seamless_minus_early_term",
            Mode::Seamless => "seamless",
            Mode::SeamlessMinusAsync => "seamless_minus_async",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::Static => "w/o dynamic sampling",
            Mode::NaiveDynamic => "naive dynamic sampling",
            Mode::Continuous => "+ continuous rollout",
            Mode::SeamlessMinusEarlyTerm => "+ async reward",
            Mode::Seamless => "+ early termination",
            Mode::SeamlessMinusAsync => "seamless w/o async reward",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.label() == label)
    }

    pub fn policy(self, cfg: &SimConfig) -> SchedulePolicy {
        let rounds = LaunchPolicy::Rounds {
            round_size: cfg.round_size.unwrap_or(cfg.batch_size),
        };
        let asynchronous = RewardDispatch::Async {
            servers: cfg.num_reward_servers,
        };
        let (launch, reward, dynamic_sampling, early_termination) = match self {
            Mode::Static => (
                LaunchPolicy::Rounds {
                    round_size: cfg.batch_size,
                },
                RewardDispatch::AfterBarrier,
                false,
                false,
            ),
            Mode::NaiveDynamic => (rounds, RewardDispatch::AfterBarrier, true, false),
            Mode::Continuous => (LaunchPolicy::Continuous, RewardDispatch::Blocking, true, false),
            Mode::SeamlessMinusEarlyTerm => (LaunchPolicy::Continuous, asynchronous, true, false),
            Mode::Seamless => (LaunchPolicy::Continuous, asynchronous, true, true),
            Mode::SeamlessMinusAsync => (LaunchPolicy::Continuous, RewardDispatch::Blocking, true, true),
        };
        SchedulePolicy {
            launch,
            reward,
            dynamic_sampling,
            early_termination,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        match s.as_str() {
            "naive" => return Ok(Mode::NaiveDynamic),
            "async" => return Ok(Mode::SeamlessMinusEarlyTerm),
            "early_term" | "full" => return Ok(Mode::Seamless),
            _ => {}
        }
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    /// Problems in the validation set; one task each, all launched at once.
    pub num_tasks: usize,
    /// Share of code problems in the validation set.
    pub code_fraction: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            num_tasks: 256,
            code_fraction: 1.0,
        }
    }
}

/// Scenario configuration. Serialized as TOML with a `schema_version` key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub schema_version: u32,
    pub mode: Mode,
    pub seed: u64,
    pub steps: usize,
    pub num_workers: usize,
    pub num_reward_servers: usize,
    /// Valid groups required per training step (`B`).
    pub batch_size: usize,
    /// Responses per group (`G`).
    pub group_size: usize,
    /// Tasks per round in round-based modes; defaults to the batch size.
    pub round_size: Option<usize>,
    /// Simulated seconds of policy update added to every step's wall time.
    pub train_update_time: f64,
    /// Simulated seconds after which a step that has not finalized fails.
    pub time_budget: f64,
    pub workload: WorkloadConfig,
    pub demand: DemandConfig,
    pub sampler: SamplerConfig,
    pub validation: ValidationConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            mode: Mode::Seamless,
            seed: 0,
            steps: 5,
            num_workers: 32,
            num_reward_servers: 8,
            batch_size: 64,
            group_size: 16,
            round_size: None,
            train_update_time: 250.0,
            time_budget: 1.0e6,
            workload: WorkloadConfig::default(),
            demand: DemandConfig::default(),
            sampler: SamplerConfig::default(),
            validation: ValidationConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.num_workers == 0 || self.batch_size == 0 || self.num_reward_servers == 0 {
            return Err(Error::InvalidConfig(
                "num_workers, num_reward_servers and batch_size must be positive".into(),
            ));
        }
        if self.group_size < 2 {
            return Err(Error::InvalidConfig("group_size must be at least 2".into()));
        }
        if self.round_size == Some(0) {
            return Err(Error::InvalidConfig("round_size must be positive".into()));
        }
        if !(self.train_update_time.is_finite() && self.train_update_time >= 0.0) {
            return Err(Error::InvalidConfig("train_update_time must be >= 0".into()));
        }
        if !(self.time_budget.is_finite() && self.time_budget > 0.0) {
            return Err(Error::InvalidConfig("time_budget must be positive".into()));
        }
        let d = &self.demand;
        if !(0.0..1.0).contains(&d.smoothing) || !(d.floor > 0.0 && d.floor <= 1.0) {
            return Err(Error::InvalidConfig("demand smoothing in [0, 1) and floor in (0, 1] required".into()));
        }
        if !(d.prior.p0 >= 0.0 && d.prior.p1 >= 0.0 && d.prior.p0 + d.prior.p1 <= 1.0) {
            return Err(Error::InvalidConfig("demand prior must be a sub-probability".into()));
        }
        if self.validation.num_tasks == 0 || !(0.0..=1.0).contains(&self.validation.code_fraction) {
            return Err(Error::InvalidConfig("validation needs tasks and a code fraction in [0, 1]".into()));
        }
        self.sampler.validate()?;
        self.workload.validate()
    }
}
