//! Synthetic rollout workload: heavy-tailed response lengths, a Beta pass
//! model, and per-domain reward latency.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Domain, Outcome, Response, ResponseGroup};
use crate::sampler::{classify_group, DrawSource, GroupClass, SamplerConfig, SamplerState};

/// Mixes seed parts with splitmix64 so independent streams can be derived
/// from (seed, step, task) tuples.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut x = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        x ^= p;
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

/// A ChaCha stream keyed by `mix_seed(parts)`.
pub fn seeded_rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(parts))
}

const STREAM_PROBLEM: u64 = 1;
const STREAM_TASK: u64 = 2;
pub(crate) const STREAM_SAMPLER: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LengthModel {
    pub median_tokens: f64,
    /// Log-scale spread shared by all responses of a problem.
    pub problem_sigma: f64,
    /// Log-scale spread of responses within a group.
    pub response_sigma: f64,
    pub max_tokens: u32,
}

impl Default for LengthModel {
    fn default() -> Self {
        // Total log-sigma sqrt(0.86^2 + 0.25^2) = 0.894 puts the 99th
        // percentile at about 8x the median.
        Self {
            median_tokens: 3000.0,
            problem_sigma: 0.86,
            response_sigma: 0.25,
            max_tokens: 32768,
        }
    }
}

impl LengthModel {
    pub fn total_sigma(&self) -> f64 {
        self.problem_sigma.hypot(self.response_sigma)
    }
}

/// Per-problem pass probability drawn from a Beta with the given mean and
/// concentration `a + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PassModel {
    pub mean: f64,
    pub concentration: f64,
}

impl Default for PassModel {
    fn default() -> Self {
        // With 16 responses per group this concentration makes the share of
        // mixed groups equal to the mean pass rate (0.41): about 38% of
        // groups fail every response and 21% pass every response.
        Self {
            mean: 0.41,
            concentration: 0.3728,
        }
    }
}

impl PassModel {
    pub fn alpha_beta(&self) -> (f64, f64) {
        (self.mean * self.concentration, (1.0 - self.mean) * self.concentration)
    }

    /// Probability a group of `g` responses is all-fail and all-pass:
    /// E[(1-p)^g] and E[p^g] under the Beta.
    pub fn group_extremes(&self, g: usize) -> (f64, f64) {
        let (a, b) = self.alpha_beta();
        let c = a + b;
        let mut p0 = 1.0;
        let mut p1 = 1.0;
        for k in 0..g {
            let k = k as f64;
            p0 *= (b + k) / (c + k);
            p1 *= (a + k) / (c + k);
        }
        (p0, p1)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        if self.mean <= 0.0 {
            return Ok(0.0);
        }
        if self.mean >= 1.0 {
            return Ok(1.0);
        }
        let (a, b) = self.alpha_beta();
        let beta = Beta::new(a, b).map_err(|e| Error::InvalidConfig(format!("pass model: {e}")))?;
        Ok(beta.sample(rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    /// Seconds to verify a math group.
    pub math: f64,
    /// Median seconds to judge a code group.
    pub code_median: f64,
    pub code_sigma: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            math: 0.05,
            code_median: 10.0,
            code_sigma: 0.5,
        }
    }
}

impl LatencyModel {
    fn sample<R: Rng + ?Sized>(&self, domain: Domain, rng: &mut R) -> Result<f64> {
        match domain {
            Domain::Math => Ok(self.math),
            Domain::Code => {
                if self.code_median <= 0.0 {
                    return Ok(0.0);
                }
                let d = LogNormal::new(self.code_median.ln(), self.code_sigma)
                    .map_err(|e| Error::InvalidConfig(format!("code latency: {e}")))?;
                Ok(d.sample(rng))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub num_problems: usize,
    pub code_fraction: f64,
    /// Tokens per simulated second per worker.
    pub decode_rate: f64,
    pub lengths: LengthModel,
    pub pass_model: PassModel,
    pub reward_latency: LatencyModel,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            num_problems: 4096,
            code_fraction: 0.5,
            decode_rate: 50.0,
            lengths: LengthModel::default(),
            pass_model: PassModel::default(),
            reward_latency: LatencyModel::default(),
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.code_fraction,
            self.decode_rate,
            self.lengths.median_tokens,
            self.lengths.problem_sigma,
            self.lengths.response_sigma,
            self.pass_model.mean,
            self.pass_model.concentration,
            self.reward_latency.math,
            self.reward_latency.code_median,
            self.reward_latency.code_sigma,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("workload parameters must be finite".into()));
        }
        if self.num_problems == 0 {
            return Err(Error::InvalidConfig("num_problems must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.code_fraction) || !(0.0..=1.0).contains(&self.pass_model.mean) {
            return Err(Error::InvalidConfig("fractions must lie in [0, 1]".into()));
        }
        if self.decode_rate <= 0.0 || self.lengths.median_tokens <= 0.0 || self.lengths.max_tokens == 0 {
            return Err(Error::InvalidConfig("decode rate and lengths must be positive".into()));
        }
        if self.lengths.problem_sigma < 0.0 || self.lengths.response_sigma < 0.0 || self.reward_latency.code_sigma < 0.0 {
            return Err(Error::InvalidConfig("spreads must be >= 0".into()));
        }
        if self.pass_model.concentration <= 0.0 {
            return Err(Error::InvalidConfig("pass concentration must be positive".into()));
        }
        if self.reward_latency.math < 0.0 || self.reward_latency.code_median < 0.0 {
            return Err(Error::InvalidConfig("reward latency must be >= 0".into()));
        }
        Ok(())
    }
}

/// Everything the engine needs to know about one launched task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskContent {
    pub problem_id: String,
    pub source: DrawSource,
    /// Scored group of responses.
    pub group: ResponseGroup,
    pub rollout_time: f64,
    pub reward_time: f64,
}

/// Supplies task contents to a driver and receives their classification.
pub trait TaskSource {
    fn begin_step(&mut self, step: usize);
    fn launch(&mut self, step: usize, launch_index: u64) -> Result<TaskContent>;
    /// Called once a task's reward is known; routes the problem.
    fn complete(&mut self, content: &TaskContent) -> Result<GroupClass>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProblem {
    pub id: String,
    pub domain: Domain,
    pub pass_probability: f64,
    /// Median response length of this problem, in tokens.
    pub median_tokens: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorkload {
    config: WorkloadConfig,
    group_size: usize,
    seed: u64,
    problems: Vec<SyntheticProblem>,
    index: HashMap<String, usize>,
    sampler: SamplerState,
}

impl SyntheticWorkload {
    pub fn new(config: WorkloadConfig, group_size: usize, sampler: SamplerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if group_size < 2 {
            return Err(Error::DegenerateGroup(group_size));
        }
        let width = config.num_problems.to_string().len().max(5);
        let mut problems = Vec::with_capacity(config.num_problems);
        for i in 0..config.num_problems {
            let mut rng = seeded_rng(&[seed, STREAM_PROBLEM, i as u64]);
            let domain = if rng.random::<f64>() < config.code_fraction {
                Domain::Code
            } else {
                Domain::Math
            };
            let pass_probability = config.pass_model.sample(&mut rng)?;
            let z: f64 = StandardNormal.sample(&mut rng);
            let median_tokens = config.lengths.median_tokens * (config.lengths.problem_sigma * z).exp();
            problems.push(SyntheticProblem {
                id: format!("p{i:0width$}"),
                domain,
                pass_probability,
                median_tokens,
            });
        }
        let index = problems.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect();
        let sampler = SamplerState::new(
            problems.iter().map(|p| p.id.clone()),
            sampler,
            mix_seed(&[seed, STREAM_SAMPLER]),
        )?;
        Ok(Self {
            config,
            group_size,
            seed,
            problems,
            index,
            sampler,
        })
    }

    pub fn problems(&self) -> &[SyntheticProblem] {
        &self.problems
    }

    pub fn sampler(&self) -> &SamplerState {
        &self.sampler
    }

    pub fn config(&self) -> &WorkloadConfig {
        &self.config
    }

    /// Content of a task for a given problem, drawn from the task's own
    /// stream so it does not depend on scheduling order.
    pub fn content_for(
        &self,
        problem: &SyntheticProblem,
        source: DrawSource,
        step: usize,
        launch_index: u64,
    ) -> Result<TaskContent> {
        let mut rng = seeded_rng(&[self.seed, STREAM_TASK, step as u64, launch_index]);
        let lengths = &self.config.lengths;
        let responses = (0..self.group_size)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let tokens = (problem.median_tokens * (lengths.response_sigma * z).exp())
                    .round()
                    .clamp(1.0, lengths.max_tokens as f64) as u32;
                let pass = rng.random::<f64>() < problem.pass_probability;
                let outcome = match problem.domain {
                    Domain::Math => Outcome::Answer(if pass { "1" } else { "0" }.into()),
                    Domain::Code => Outcome::Tests(vec![pass]),
                };
                Response::new(problem.id.clone(), tokens, outcome).scored(f64::from(u8::from(pass)))
            })
            .collect();
        let group = ResponseGroup::new(problem.id.clone(), responses);
        let rollout_time = group.longest_response() as f64 / self.config.decode_rate;
        let reward_time = self.config.reward_latency.sample(problem.domain, &mut rng)?;
        Ok(TaskContent {
            problem_id: problem.id.clone(),
            source,
            group,
            rollout_time,
            reward_time,
        })
    }
}

impl TaskSource for SyntheticWorkload {
    fn begin_step(&mut self, _step: usize) {
        self.sampler.begin_step();
    }

    fn launch(&mut self, step: usize, launch_index: u64) -> Result<TaskContent> {
        let (id, source) = self.sampler.sample_next_problem()?;
        let problem = &self.problems[self.index[&id]];
        self.content_for(problem, source, step, launch_index)
    }

    fn complete(&mut self, content: &TaskContent) -> Result<GroupClass> {
        let class = classify_group(&content.group)?;
        self.sampler.record(&content.problem_id, class)?;
        Ok(class)
    }
}
