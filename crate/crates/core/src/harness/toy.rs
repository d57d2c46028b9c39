//! End-to-end toy training: sampler, engine, rewards and GRPO on the small
//! sequence policy.

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{
    drive, mix_seed, run_live_step, seeded_rng, LatencyModel, LengthModel, LiveOptions, PassEstimate,
    Scheduler, SimConfig, StepReport, TaskContent, TaskSource,
};
use crate::error::{Error, Result};
use crate::grpo::policy::{problem_target, PolicyParams, SequenceJudge};
use crate::grpo::{train_iteration, GrpoConfig, TrainGroup};
use crate::model::{Domain, Outcome, ProblemSpec, Response, ResponseGroup};
use crate::reward::{score_response, CompiledGrouping, RewardScheme};
use crate::sampler::{classify_group, GroupClass, SamplerConfig, SamplerState};

const STREAM_ROLLOUT: u64 = 21;

/// Per-position target probabilities that make a full pass as likely as
/// the problem's prior.
pub fn initial_policy(
    problems: &[ProblemSpec],
    vocab: usize,
    seq_len: usize,
    temperature: f64,
    top_p: f64,
) -> Result<PolicyParams> {
    let mut params = PolicyParams::new(vocab, seq_len)?;
    params.temperature = temperature;
    params.top_p = top_p;
    for p in problems {
        let slot = params.add_problem(&p.id);
        let target = problem_target(p, seq_len)?;
        if target.iter().any(|t| t.is_some_and(|t| t as usize >= vocab)) {
            return Err(Error::InvalidArgument(format!("{} targets a token outside the vocabulary", p.id)));
        }
        let checked = target.iter().filter(|t| t.is_some()).count().max(1);
        let per_position = p.metadata.difficulty_prior.powf(1.0 / checked as f64);
        for (pos, t) in target.iter().enumerate() {
            if let Some(t) = t {
                params.bias_toward(slot, pos, *t, per_position);
            }
        }
    }
    Ok(params)
}

/// Probability that every checked position is right.
fn full_pass_probability(params: &PolicyParams, slot: usize, target: &[Option<u8>]) -> f64 {
    target
        .iter()
        .enumerate()
        .filter_map(|(pos, t)| t.map(|t| params.probs(slot, pos)[t as usize]))
        .product()
}

/// One rolled-out group, as seen by the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub step: usize,
    pub problem_id: String,
    pub mean_reward: f64,
    pub any_reward: bool,
    pub class: GroupClass,
    /// Full-pass probability under the policy that produced the group.
    pub full_pass_probability: f64,
}

/// Task source that samples real responses from the toy policy.
#[derive(Debug)]
pub struct ToySource {
    problems: Vec<ProblemSpec>,
    targets: Vec<Vec<Option<u8>>>,
    index: HashMap<String, usize>,
    compiled: Vec<Option<CompiledGrouping>>,
    policy: PolicyParams,
    scheme: RewardScheme,
    sampler: SamplerState,
    group_size: usize,
    seed: u64,
    lengths: LengthModel,
    decode_rate: f64,
    latency: LatencyModel,
    samples: HashMap<u64, Vec<Vec<u8>>>,
    pass_probability: HashMap<String, f64>,
    rollouts: Vec<RolloutRecord>,
    step: usize,
}

impl ToySource {
    pub fn new(
        problems: Vec<ProblemSpec>,
        policy: PolicyParams,
        scheme: RewardScheme,
        sampler: SamplerConfig,
        sim: &SimConfig,
        seed: u64,
    ) -> Result<Self> {
        let targets = problems
            .iter()
            .map(|p| problem_target(p, policy.seq_len()))
            .collect::<Result<Vec<_>>>()?;
        let compiled = problems
            .iter()
            .map(|p| match (p.domain, scheme, &p.grouping) {
                (Domain::Code, RewardScheme::Strict | RewardScheme::Soft, Some(g)) => {
                    let ids: Vec<&str> = p.tests.iter().map(|t| t.id.as_str()).collect();
                    CompiledGrouping::new(g, &ids).map(Some)
                }
                (Domain::Code, RewardScheme::Strict | RewardScheme::Soft, None) => {
                    Err(Error::MissingGrouping(p.id.clone()))
                }
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        let index = problems.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect();
        let sampler = SamplerState::new(problems.iter().map(|p| p.id.clone()), sampler, mix_seed(&[seed, 23]))?;
        Ok(Self {
            problems,
            targets,
            index,
            compiled,
            policy,
            scheme,
            sampler,
            group_size: sim.group_size,
            seed,
            lengths: sim.workload.lengths,
            decode_rate: sim.workload.decode_rate,
            latency: sim.workload.reward_latency,
            samples: HashMap::new(),
            pass_probability: HashMap::new(),
            rollouts: Vec::new(),
            step: 0,
        })
    }

    pub fn problems(&self) -> &[ProblemSpec] {
        &self.problems
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn set_policy(&mut self, policy: PolicyParams) {
        self.policy = policy;
    }

    pub fn sampler(&self) -> &SamplerState {
        &self.sampler
    }

    pub fn rollouts(&self) -> &[RolloutRecord] {
        &self.rollouts
    }

    pub fn samples(&self, launch_index: u64) -> Option<&Vec<Vec<u8>>> {
        self.samples.get(&launch_index)
    }

    fn reward(&self, problem: usize, tokens: &[u8]) -> Result<(f64, Outcome)> {
        let p = &self.problems[problem];
        let outcome = SequenceJudge.outcome(p, tokens)?;
        let reward = match (&self.compiled[problem], &outcome) {
            (Some(c), Outcome::Tests(bits)) if self.scheme == RewardScheme::Strict => c.strict(bits)?,
            (Some(c), Outcome::Tests(bits)) => c.soft(bits)?,
            _ => {
                let response = Response::new(p.id.clone(), tokens.len() as u32, outcome.clone());
                score_response(&response, p, self.scheme, None)?
            }
        };
        Ok((reward, outcome))
    }

    /// Exact expected reward of one problem under the current policy,
    /// enumerating right/wrong at every checked position.
    pub fn expected_reward(&self, problem: usize) -> Result<f64> {
        let slot = self
            .policy
            .slot(&self.problems[problem].id)
            .ok_or_else(|| Error::UnknownProblem(self.problems[problem].id.clone()))?;
        let target = &self.targets[problem];
        if self.problems[problem].domain == Domain::Math || self.scheme == RewardScheme::BinaryAllTests {
            return Ok(full_pass_probability(&self.policy, slot, target));
        }
        let checked: Vec<(usize, u8)> = target
            .iter()
            .enumerate()
            .filter_map(|(pos, t)| t.map(|t| (pos, t)))
            .collect();
        let probs: Vec<f64> = checked
            .iter()
            .map(|&(pos, t)| self.policy.probs(slot, pos)[t as usize])
            .collect();
        let vocab = self.policy.vocab() as u8;
        let mut tokens = vec![0u8; self.policy.seq_len()];
        let mut total = 0.0;
        for mask in 0u32..(1 << checked.len()) {
            let mut weight = 1.0;
            for (bit, (&(pos, t), &p)) in checked.iter().zip(&probs).enumerate() {
                if mask >> bit & 1 == 1 {
                    tokens[pos] = t;
                    weight *= p;
                } else {
                    tokens[pos] = (t + 1) % vocab;
                    weight *= 1.0 - p;
                }
            }
            total += weight * self.reward(problem, &tokens)?.0;
        }
        Ok(total)
    }

    /// Dataset mean of the expected reward and of the full-pass probability.
    pub fn evaluate(&self) -> Result<(f64, f64)> {
        let mut reward = 0.0;
        let mut full = 0.0;
        for (i, p) in self.problems.iter().enumerate() {
            let slot = self.policy.slot(&p.id).expect("registered problem");
            reward += self.expected_reward(i)?;
            full += full_pass_probability(&self.policy, slot, &self.targets[i]);
        }
        let n = self.problems.len() as f64;
        Ok((reward / n, full / n))
    }
}

impl TaskSource for ToySource {
    fn begin_step(&mut self, step: usize) {
        self.step = step;
        self.samples.clear();
        self.pass_probability.clear();
        self.sampler.begin_step();
    }

    fn launch(&mut self, step: usize, launch_index: u64) -> Result<TaskContent> {
        let (id, source) = self.sampler.sample_next_problem()?;
        let i = self.index[&id];
        let slot = self.policy.slot(&id).ok_or_else(|| Error::UnknownProblem(id.clone()))?;
        let mut rng = seeded_rng(&[self.seed, STREAM_ROLLOUT, step as u64, launch_index]);
        let mut samples = Vec::with_capacity(self.group_size);
        let mut responses = Vec::with_capacity(self.group_size);
        let median = self.lengths.median_tokens;
        let sigma = self.lengths.total_sigma();
        for _ in 0..self.group_size {
            let tokens = self.policy.sample(slot, &mut rng);
            let (reward, outcome) = self.reward(i, &tokens)?;
            let z: f64 = StandardNormal.sample(&mut rng);
            let length = (median * (sigma * z).exp()).clamp(1.0, self.lengths.max_tokens as f64) as u32;
            responses.push(Response::new(id.clone(), length, outcome).scored(reward));
            samples.push(tokens);
        }
        let group = ResponseGroup::new(id.clone(), responses);
        let reward_time = match self.problems[i].domain {
            Domain::Math => self.latency.math,
            Domain::Code => self.latency.code_median,
        };
        self.samples.insert(launch_index, samples);
        self.pass_probability
            .insert(id.clone(), full_pass_probability(&self.policy, slot, &self.targets[i]));
        Ok(TaskContent {
            problem_id: id,
            source,
            rollout_time: group.longest_response() as f64 / self.decode_rate,
            reward_time,
            group,
        })
    }

    fn complete(&mut self, content: &TaskContent) -> Result<GroupClass> {
        let class = classify_group(&content.group)?;
        self.sampler.record(&content.problem_id, class)?;
        let rewards = content.group.rewards()?;
        self.rollouts.push(RolloutRecord {
            step: self.step,
            problem_id: content.problem_id.clone(),
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            any_reward: rewards.iter().any(|r| *r > 0.0),
            class,
            full_pass_probability: self.pass_probability.get(&content.problem_id).copied().unwrap_or(f64::NAN),
        });
        Ok(class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyOptions {
    /// Drive rollouts on threads against the wall clock instead of the
    /// simulated clock. Not reproducible run to run.
    pub live: bool,
    /// Real seconds per simulated second in live mode.
    pub time_scale: f64,
    /// Problems whose full-pass probability is below this count as hard.
    pub hard_threshold: f64,
}

impl Default for ToyOptions {
    fn default() -> Self {
        Self {
            live: false,
            time_scale: 1e-4,
            hard_threshold: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub batch_mean_reward: f64,
    /// Mean reward over every group rolled out in the step.
    pub rollout_mean_reward: f64,
    /// Dataset mean of the exact expected reward after the update.
    pub eval_reward: f64,
    /// Dataset mean of the full-pass probability after the update.
    pub eval_full_pass: f64,
    pub pool_size: usize,
    pub active_size: usize,
    pub sample_waste_ratio: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
    pub mean_abs_advantage: f64,
    pub hard_groups: usize,
    pub hard_groups_with_reward: usize,
    pub zero_gradient_in_batch: usize,
}

pub struct ToyTrainer {
    sim: SimConfig,
    grpo: GrpoConfig,
    options: ToyOptions,
    source: ToySource,
    params: PolicyParams,
    estimate: PassEstimate,
    clock: f64,
    iteration: usize,
    initial_eval: (f64, f64),
}

impl ToyTrainer {
    pub fn new(
        problems: Vec<ProblemSpec>,
        vocab: usize,
        seq_len: usize,
        scheme: RewardScheme,
        sim: SimConfig,
        grpo: GrpoConfig,
        options: ToyOptions,
        seed: u64,
    ) -> Result<Self> {
        sim.validate()?;
        grpo.validate()?;
        if sim.batch_size != grpo.train_batch_size {
            return Err(Error::InvalidConfig(format!(
                "engine batch size {} differs from training batch size {}",
                sim.batch_size, grpo.train_batch_size
            )));
        }
        if problems.is_empty() {
            return Err(Error::EmptyInput("dataset".into()));
        }
        let params = initial_policy(&problems, vocab, seq_len, grpo.temperature, grpo.top_p)?;
        let source = ToySource::new(problems, params.clone(), scheme, sim.sampler.clone(), &sim, seed)?;
        let initial_eval = source.evaluate()?;
        let estimate = sim.demand.prior;
        Ok(Self {
            sim,
            grpo,
            options,
            source,
            params,
            estimate,
            clock: 0.0,
            iteration: 0,
            initial_eval,
        })
    }

    pub fn source(&self) -> &ToySource {
        &self.source
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    /// Expected reward and full-pass probability before any update.
    pub fn initial_eval(&self) -> (f64, f64) {
        self.initial_eval
    }

    fn rollout_step(&mut self) -> Result<(StepReport, Vec<Vec<Vec<u8>>>)> {
        let step = self.iteration;
        let report = if self.options.live {
            run_live_step(
                &self.sim,
                &mut self.source,
                self.estimate,
                step,
                LiveOptions {
                    time_scale: self.options.time_scale,
                    ..LiveOptions::default()
                },
            )?
        } else {
            let mut scheduler = Scheduler::new(
                self.sim.mode.policy(&self.sim),
                self.sim.batch_size,
                self.sim.num_workers,
                self.sim.demand,
                self.estimate,
            )?;
            self.source.begin_step(step);
            let contents = drive(&mut scheduler, &mut self.source, step, self.clock, self.sim.time_budget)?;
            crate::engine::finish_step(&scheduler, &contents, self.sim.mode, self.sim.seed, step, self.sim.train_update_time)?
        };
        let samples = report
            .batch
            .iter()
            .map(|b| {
                self.source
                    .samples(b.launch_index)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("no samples for task {}", b.launch_index)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((report, samples))
    }

    pub fn step(&mut self) -> Result<IterationRecord> {
        let first_rollout = self.source.rollouts.len();
        let (report, samples) = self.rollout_step()?;
        self.estimate = report.estimate;
        self.clock += report.metrics.wall_time;

        let batch: Vec<TrainGroup> = report
            .batch_contents
            .iter()
            .zip(samples)
            .map(|(c, samples)| {
                Ok(TrainGroup {
                    problem_id: c.problem_id.clone(),
                    samples,
                    rewards: c.group.rewards()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = train_iteration(&mut self.params, &batch, &self.grpo)?;
        self.source.set_policy(self.params.clone());
        let (eval_reward, eval_full_pass) = self.source.evaluate()?;

        let mut hard_groups = 0;
        let mut hard_with_reward = 0;
        let mut reward_sum = 0.0;
        for r in &self.source.rollouts[first_rollout..] {
            reward_sum += r.mean_reward;
            if r.full_pass_probability < self.options.hard_threshold {
                hard_groups += 1;
                hard_with_reward += usize::from(r.any_reward);
            }
        }
        let completed = self.source.rollouts.len() - first_rollout;
        let record = IterationRecord {
            iteration: self.iteration,
            batch_mean_reward: stats.mean_reward,
            rollout_mean_reward: if completed > 0 { reward_sum / completed as f64 } else { 0.0 },
            eval_reward,
            eval_full_pass,
            pool_size: self.source.sampler.pool().len(),
            active_size: self.source.sampler.active().len(),
            sample_waste_ratio: report.metrics.sample_waste_ratio,
            clip_fraction: stats.clip_fraction,
            entropy: stats.entropy,
            mean_abs_advantage: stats.mean_abs_advantage,
            hard_groups,
            hard_groups_with_reward: hard_with_reward,
            zero_gradient_in_batch: report.metrics.zero_gradient_in_batch,
        };
        self.iteration += 1;
        Ok(record)
    }
}
