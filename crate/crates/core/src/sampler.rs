//! Batch assembly: dynamic-sampling filter, the easy-problem pool, and the
//! offline pass-rate prefilter.

use std::collections::{HashMap, HashSet};

use indexmap::IndexSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{pass_rate, Domain, ResponseGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupClass {
    Keep,
    RouteToEasyPool,
    DiscardZero,
}

/// Classifies a scored group by its pass rate. Only full-reward responses
/// count as passing, so a soft-reward group with partial credit everywhere
/// is still a zero-pass group.
pub fn classify_group(group: &ResponseGroup) -> Result<GroupClass> {
    classify_pass_rate(pass_rate(group)?)
}

pub fn classify_pass_rate(rate: f64) -> Result<GroupClass> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("pass rate {rate} outside [0, 1]")));
    }
    Ok(if rate == 1.0 {
        GroupClass::RouteToEasyPool
    } else if rate == 0.0 {
        GroupClass::DiscardZero
    } else {
        GroupClass::Keep
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EasyPoolMode {
    /// Perfect-pass problems are kept aside and redrawn with probability
    /// `alpha`.
    Resample { alpha: f64 },
    /// Perfect-pass problems are dropped from training for good.
    Delete,
}

impl Default for EasyPoolMode {
    fn default() -> Self {
        Self::Resample { alpha: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub easy_pool: EasyPoolMode,
    /// Drop a problem after this many consecutive zero-pass groups.
    pub zero_pass_cap: Option<u32>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            easy_pool: EasyPoolMode::default(),
            zero_pass_cap: None,
        }
    }
}

impl SamplerConfig {
    pub fn alpha(&self) -> f64 {
        match self.easy_pool {
            EasyPoolMode::Resample { alpha } => alpha,
            EasyPoolMode::Delete => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.alpha();
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::InvalidConfig(format!("alpha {a} outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassStats {
    pub zero: usize,
    pub perfect: usize,
    pub mixed: usize,
}

impl PassStats {
    pub fn total(&self) -> usize {
        self.zero + self.perfect + self.mixed
    }

    pub fn record(&mut self, class: GroupClass) {
        match class {
            GroupClass::Keep => self.mixed += 1,
            GroupClass::RouteToEasyPool => self.perfect += 1,
            GroupClass::DiscardZero => self.zero += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawSource {
    Active,
    Pool,
}

#[derive(Debug, Clone)]
pub struct SamplerState {
    config: SamplerConfig,
    active: IndexSet<String>,
    pool: IndexSet<String>,
    removed: IndexSet<String>,
    drawn: HashSet<String>,
    zero_streak: HashMap<String, u32>,
    stats: PassStats,
    rng: ChaCha8Rng,
}

impl SamplerState {
    pub fn new<I, S>(problem_ids: I, config: SamplerConfig, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        config.validate()?;
        let mut active = IndexSet::new();
        for id in problem_ids {
            let id = id.into();
            if !active.insert(id.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate id {id}")));
            }
        }
        Ok(Self {
            config,
            active,
            pool: IndexSet::new(),
            removed: IndexSet::new(),
            drawn: HashSet::new(),
            zero_streak: HashMap::new(),
            stats: PassStats::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn active(&self) -> &IndexSet<String> {
        &self.active
    }

    pub fn pool(&self) -> &IndexSet<String> {
        &self.pool
    }

    /// Problems dropped for good (deletion mode or zero-pass cap).
    pub fn removed(&self) -> &IndexSet<String> {
        &self.removed
    }

    pub fn stats(&self) -> PassStats {
        self.stats
    }

    /// Starts a training step: statistics reset and every problem becomes
    /// drawable again.
    pub fn begin_step(&mut self) {
        self.stats = PassStats::default();
        self.drawn.clear();
    }

    fn draw_from(&mut self, from_pool: bool) -> Option<String> {
        let set = if from_pool { &self.pool } else { &self.active };
        let fresh: Vec<&String> = set.iter().filter(|id| !self.drawn.contains(*id)).collect();
        let candidates = if fresh.is_empty() {
            set.iter().collect()
        } else {
            fresh
        };
        if candidates.is_empty() {
            return None;
        }
        let i = self.rng.random_range(0..candidates.len());
        Some(candidates[i].clone())
    }

    /// Draws the next problem. With probability alpha (and a nonempty pool)
    /// the draw comes from the easy pool, otherwise from the active set.
    /// Within a step draws are without replacement until a set is used up.
    pub fn sample_next_problem(&mut self) -> Result<(String, DrawSource)> {
        if self.active.is_empty() {
            return Err(Error::DatasetExhausted);
        }
        let alpha = self.config.alpha();
        // Always consume one uniform so the stream does not depend on the
        // pool's size.
        let u: f64 = self.rng.random();
        let (id, source) = if !self.pool.is_empty() && u < alpha {
            (self.draw_from(true), DrawSource::Pool)
        } else {
            (self.draw_from(false), DrawSource::Active)
        };
        let id = id.expect("nonempty set");
        self.drawn.insert(id.clone());
        Ok((id, source))
    }

    /// Applies the routing for a scored group of `problem_id`.
    pub fn record(&mut self, problem_id: &str, class: GroupClass) -> Result<()> {
        let in_active = self.active.contains(problem_id);
        let in_pool = self.pool.contains(problem_id);
        if !in_active && !in_pool {
            if self.removed.contains(problem_id) {
                // A group launched before its problem was dropped.
                self.stats.record(class);
                return Ok(());
            }
            return Err(Error::UnknownProblem(problem_id.to_string()));
        }
        self.stats.record(class);
        match class {
            GroupClass::RouteToEasyPool => {
                self.zero_streak.remove(problem_id);
                if in_active {
                    self.active.shift_remove(problem_id);
                    match self.config.easy_pool {
                        EasyPoolMode::Resample { .. } => {
                            self.pool.insert(problem_id.to_string());
                        }
                        EasyPoolMode::Delete => {
                            self.removed.insert(problem_id.to_string());
                        }
                    }
                }
            }
            GroupClass::Keep => {
                self.zero_streak.remove(problem_id);
                self.return_to_active(problem_id);
            }
            GroupClass::DiscardZero => {
                self.return_to_active(problem_id);
                let streak = self.zero_streak.entry(problem_id.to_string()).or_insert(0);
                *streak += 1;
                if let Some(cap) = self.config.zero_pass_cap {
                    if *streak >= cap && self.active.len() > 1 {
                        self.active.shift_remove(problem_id);
                        self.removed.insert(problem_id.to_string());
                    }
                }
            }
        }
        Ok(())
    }

    fn return_to_active(&mut self, problem_id: &str) {
        if self.pool.shift_remove(problem_id) {
            self.active.insert(problem_id.to_string());
        }
    }
}

/// A valid group tagged with the launch index of the task that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidSample {
    pub launch_index: u64,
    pub group: ResponseGroup,
}

/// Takes the first `batch_size` valid samples by launch index.
pub fn assemble_batch(mut valid: Vec<ValidSample>, batch_size: usize) -> Result<Vec<ValidSample>> {
    if valid.len() < batch_size {
        return Err(Error::InsufficientValid {
            have: valid.len(),
            need: batch_size,
        });
    }
    for s in &valid {
        if classify_group(&s.group)? != GroupClass::Keep {
            return Err(Error::InvalidArgument(format!(
                "group for {} has pass rate 0 or 1",
                s.group.problem_id
            )));
        }
    }
    valid.sort_by_key(|s| s.launch_index);
    valid.truncate(batch_size);
    Ok(valid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefilterDecision {
    Keep,
    DropEasy,
    DropUnsolvable,
}

/// Who produced the rollouts being counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutSource {
    /// The starting policy; too-easy problems are dropped.
    Policy,
    /// A pool of strong solvers; problems none of them solve are dropped.
    SolverPool,
}

pub const EASY_PASS_THRESHOLD: f64 = 0.9;

/// Offline difficulty filter from `k` passing rollouts out of `n`. Math drops
/// problems above the easy threshold; code drops only problems solved in
/// every rollout.
pub fn difficulty_prefilter(
    k: usize,
    n: usize,
    source: RolloutSource,
    domain: Domain,
) -> Result<PrefilterDecision> {
    if n == 0 {
        return Err(Error::InvalidArgument("prefilter needs n >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("pass count {k} exceeds {n} rollouts")));
    }
    Ok(match source {
        RolloutSource::SolverPool if k == 0 => PrefilterDecision::DropUnsolvable,
        RolloutSource::SolverPool => PrefilterDecision::Keep,
        RolloutSource::Policy => {
            let easy = match domain {
                Domain::Math => k as f64 / n as f64 > EASY_PASS_THRESHOLD,
                Domain::Code => k == n,
            };
            if easy {
                PrefilterDecision::DropEasy
            } else {
                PrefilterDecision::Keep
            }
        }
    })
}
