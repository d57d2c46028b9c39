use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::advantage::compute_advantages;
use super::objective::{grpo_objective, ClipRange, ObjectiveValue};
use super::policy::PolicyParams;
use super::GrpoConfig;
use crate::error::{Error, Result};

/// One scored group of sampled token sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainGroup {
    pub problem_id: String,
    pub samples: Vec<Vec<u8>>,
    pub rewards: Vec<f64>,
}

/// A group with advantages and the old-policy log-probs frozen.
#[derive(Debug, Clone)]
pub struct PreparedGroup {
    pub slot: usize,
    pub samples: Vec<Vec<u8>>,
    pub advantages: Vec<f64>,
    pub old_log_probs: Vec<Vec<f64>>,
}

impl PreparedGroup {
    pub fn prepare(params: &PolicyParams, group: &TrainGroup, std_guard: f64) -> Result<Self> {
        let slot = params
            .slot(&group.problem_id)
            .ok_or_else(|| Error::UnknownProblem(group.problem_id.clone()))?;
        if group.samples.len() != group.rewards.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples with {} rewards",
                group.samples.len(),
                group.rewards.len()
            )));
        }
        if let Some(s) = group.samples.iter().find(|s| s.len() != params.seq_len()) {
            return Err(Error::ShapeMismatch(format!(
                "sample of length {} for policy length {}",
                s.len(),
                params.seq_len()
            )));
        }
        let advantages = compute_advantages(&group.rewards, std_guard)?;
        let old_log_probs = group
            .samples
            .iter()
            .map(|s| params.sequence_log_probs(slot, s))
            .collect();
        Ok(Self {
            slot,
            samples: group.samples.clone(),
            advantages,
            old_log_probs,
        })
    }

    pub fn tokens(&self) -> usize {
        self.samples.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone)]
pub struct GradientOutput {
    pub grad: Vec<f64>,
    pub loss: f64,
    pub clip_fraction: f64,
    pub tokens: usize,
}

/// Evaluates the loss through the generic objective. Used as the reference
/// path the analytic gradient is checked against.
pub fn surrogate_loss(
    params: &PolicyParams,
    groups: &[PreparedGroup],
    clip: &ClipRange,
) -> Result<ObjectiveValue> {
    let mut ratios = Vec::new();
    let mut advantages = Vec::new();
    let mut lengths = Vec::new();
    for g in groups {
        for ((sample, adv), old) in g.samples.iter().zip(&g.advantages).zip(&g.old_log_probs) {
            let row = params
                .sequence_log_probs(g.slot, sample)
                .iter()
                .zip(old)
                .map(|(new, old)| (new - old).exp())
                .collect::<Vec<_>>();
            lengths.push(row.len());
            ratios.push(row);
            advantages.push(*adv);
        }
    }
    grpo_objective(&ratios, &advantages, &lengths, clip)
}

struct GroupGrad {
    slot: usize,
    problem: Vec<f64>,
    shared: Vec<f64>,
    surrogate_sum: f64,
    clipped: usize,
}

fn group_gradient(params: &PolicyParams, g: &PreparedGroup, clip: &ClipRange) -> GroupGrad {
    let vocab = params.vocab();
    let mut local = vec![0.0; params.block()];
    let mut surrogate_sum = 0.0;
    let mut clipped = 0;
    for ((sample, &adv), old) in g.samples.iter().zip(&g.advantages).zip(&g.old_log_probs) {
        for (pos, (&tok, &old_lp)) in sample.iter().zip(old).enumerate() {
            let probs = params.probs(g.slot, pos);
            let ratio = (probs[tok as usize].ln() - old_lp).exp();
            let (value, was_clipped) = clip.surrogate(ratio, adv);
            surrogate_sum += value;
            clipped += usize::from(was_clipped);
            let d_ratio = clip.surrogate_grad(ratio, adv);
            if d_ratio == 0.0 {
                continue;
            }
            // d ratio / d z_k = ratio * (1[k = tok] - p_k) / T
            let scale = d_ratio * ratio / params.temperature;
            let row = &mut local[pos * vocab..(pos + 1) * vocab];
            for (k, p) in probs.iter().enumerate() {
                let indicator = if k == tok as usize { 1.0 } else { 0.0 };
                row[k] += scale * (indicator - p);
            }
        }
    }
    GroupGrad {
        slot: g.slot,
        shared: local.clone(),
        problem: local,
        surrogate_sum,
        clipped,
    }
}

/// Analytic gradient of the loss (negated token-mean surrogate) with respect
/// to every policy parameter. Groups are processed in parallel and summed in
/// input order, so the result does not depend on thread count.
pub fn policy_gradient(
    params: &PolicyParams,
    groups: &[PreparedGroup],
    clip: &ClipRange,
) -> Result<GradientOutput> {
    let tokens: usize = groups.iter().map(PreparedGroup::tokens).sum();
    if tokens == 0 {
        return Err(Error::ShapeMismatch("no tokens".into()));
    }
    let parts: Vec<GroupGrad> = groups
        .par_iter()
        .map(|g| group_gradient(params, g, clip))
        .collect();

    let n = tokens as f64;
    let mut grad = vec![0.0; params.num_params()];
    let mut surrogate = 0.0;
    let mut clipped = 0;
    let block = params.block();
    let shared_start = params.shared_index(0, 0);
    for part in parts {
        let start = params.problem_index(part.slot, 0, 0);
        for (i, v) in part.problem.iter().enumerate() {
            grad[start + i] -= v / n;
        }
        for (i, v) in part.shared.iter().enumerate().take(block) {
            grad[shared_start + i] -= v / n;
        }
        surrogate += part.surrogate_sum;
        clipped += part.clipped;
    }
    if grad.iter().any(|g| !g.is_finite()) || !surrogate.is_finite() {
        return Err(Error::NumericalBlowup);
    }
    Ok(GradientOutput {
        grad,
        loss: -surrogate / n,
        clip_fraction: clipped as f64 / n,
        tokens,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub updates: usize,
}

/// One training iteration: freeze the old policy, then take
/// `grad_updates_per_iteration` SGD steps cycling through mini-batches in
/// batch order.
pub fn train_iteration(
    params: &mut PolicyParams,
    batch: &[TrainGroup],
    cfg: &GrpoConfig,
) -> Result<IterationStats> {
    cfg.validate()?;
    if batch.len() != cfg.train_batch_size {
        return Err(Error::InvalidArgument(format!(
            "assembled batch has {} groups, expected {}",
            batch.len(),
            cfg.train_batch_size
        )));
    }
    let clip = cfg.clip_range()?;

    let prepared = batch
        .iter()
        .map(|g| PreparedGroup::prepare(params, g, cfg.std_guard))
        .collect::<Result<Vec<_>>>()?;

    let responses: usize = batch.iter().map(|g| g.rewards.len()).sum();
    let mean_reward =
        batch.iter().flat_map(|g| g.rewards.iter()).sum::<f64>() / responses.max(1) as f64;
    let mean_abs_advantage = prepared
        .iter()
        .flat_map(|g| g.advantages.iter())
        .map(|a| a.abs())
        .sum::<f64>()
        / responses.max(1) as f64;

    let mut entropy = 0.0;
    let mut states = 0usize;
    for g in &prepared {
        for pos in 0..params.seq_len() {
            entropy += params.entropy(g.slot, pos);
            states += 1;
        }
    }
    entropy /= states.max(1) as f64;

    let minibatches: Vec<&[PreparedGroup]> = prepared.chunks(cfg.mini_batch_size).collect();
    let mut clip_total = 0.0;
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    for update in 0..cfg.grad_updates_per_iteration {
        let mb = minibatches[update % minibatches.len()];
        let out = policy_gradient(params, mb, &clip)?;
        if update == 0 {
            initial_loss = out.loss;
        }
        final_loss = out.loss;
        clip_total += out.clip_fraction;
        params.apply_step(&out.grad, cfg.learning_rate)?;
    }

    Ok(IterationStats {
        mean_reward,
        mean_abs_advantage,
        clip_fraction: clip_total / cfg.grad_updates_per_iteration.max(1) as f64,
        entropy,
        initial_loss,
        final_loss,
        updates: cfg.grad_updates_per_iteration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn central_difference(
        params: &PolicyParams,
        groups: &[PreparedGroup],
        clip: &ClipRange,
        h: f64,
    ) -> Vec<f64> {
        let mut p = params.clone();
        (0..params.num_params())
            .map(|i| {
                let x = p.get(i);
                p.set(i, x + h);
                let up = surrogate_loss(&p, groups, clip).unwrap().loss;
                p.set(i, x - h);
                let down = surrogate_loss(&p, groups, clip).unwrap().loss;
                p.set(i, x);
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    // Coordinates whose true gradient is zero only reach round-off level in
    // the finite difference, so the denominator is floored at 1e-4.
    fn relative_error(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
    }

    fn near_clip_boundary(params: &PolicyParams, groups: &[PreparedGroup], clip: &ClipRange) -> bool {
        groups.iter().any(|g| {
            g.samples.iter().zip(&g.old_log_probs).any(|(s, old)| {
                params.sequence_log_probs(g.slot, s).iter().zip(old).any(|(new, old)| {
                    let r = (new - old).exp();
                    (r - (1.0 - clip.eps_low)).abs() < 1e-4 || (r - (1.0 + clip.eps_high)).abs() < 1e-4
                })
            })
        })
    }

    fn bandit() -> (PolicyParams, Vec<PreparedGroup>) {
        // Two-token vocabulary, one position, one problem.
        let mut params = PolicyParams::new(2, 1).unwrap();
        params.add_problem("q");
        let group = TrainGroup {
            problem_id: "q".into(),
            samples: vec![vec![0], vec![1], vec![0], vec![1]],
            rewards: vec![1.0, 0.0, 1.0, 1.0],
        };
        let prepared = PreparedGroup::prepare(&params, &group, 1e-6).unwrap();
        params.set(0, 0.1);
        params.set(1, -0.05);
        (params, vec![prepared])
    }

    #[test]
    fn bandit_gradient_matches_central_difference() {
        let (params, groups) = bandit();
        let clip = ClipRange::new(0.2, 0.28).unwrap();
        let out = policy_gradient(&params, &groups, &clip).unwrap();
        let fd = central_difference(&params, &groups, &clip, 1e-6);
        for (a, n) in out.grad.iter().zip(&fd) {
            assert!(relative_error(*a, *n) <= 1e-5, "{a} vs {n}");
        }
        assert!(out.grad.iter().any(|g| g.abs() > 1e-3));
    }

    #[test]
    fn zero_advantage_gives_zero_gradient() {
        let mut params = PolicyParams::new(4, 3).unwrap();
        params.add_problem("q");
        let group = TrainGroup {
            problem_id: "q".into(),
            samples: vec![vec![0, 1, 2], vec![3, 2, 1]],
            rewards: vec![1.0, 1.0],
        };
        let prepared = PreparedGroup::prepare(&params, &group, 1e-6).unwrap();
        let clip = ClipRange::new(0.2, 0.28).unwrap();
        let out = policy_gradient(&params, &[prepared], &clip).unwrap();
        assert!(out.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn saturated_clip_contributes_nothing() {
        let mut params = PolicyParams::new(2, 1).unwrap();
        params.add_problem("q");
        let group = TrainGroup {
            problem_id: "q".into(),
            samples: vec![vec![0], vec![1]],
            rewards: vec![1.0, 0.0],
        };
        let prepared = PreparedGroup::prepare(&params, &group, 1e-6).unwrap();
        // Push token 0 far above its old probability: ratio > 1 + eps_high
        // with A > 0, and token 1's ratio < 1 - eps_low with A < 0.
        params.set(0, 3.0);
        let clip = ClipRange::new(0.2, 0.28).unwrap();
        let out = policy_gradient(&params, &[prepared], &clip).unwrap();
        assert!(out.grad.iter().all(|g| *g == 0.0));
        assert_eq!(out.clip_fraction, 1.0);
    }

    #[test]
    fn random_small_policies_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let clip = ClipRange::new(0.2, 0.28).unwrap();
        let mut checked = 0;
        while checked < 100 {
            let vocab = rng.random_range(2..6);
            let len = rng.random_range(1..4);
            let mut params = PolicyParams::new(vocab, len).unwrap();
            let mut groups = Vec::new();
            for q in 0..2 {
                let id = format!("q{q}");
                params.add_problem(&id);
                let g = TrainGroup {
                    problem_id: id,
                    samples: (0..4)
                        .map(|_| (0..len).map(|_| rng.random_range(0..vocab) as u8).collect())
                        .collect(),
                    rewards: (0..4).map(|_| rng.random::<f64>()).collect(),
                };
                groups.push(g);
            }
            let prepared: Vec<_> = groups
                .iter()
                .map(|g| PreparedGroup::prepare(&params, g, 1e-6).unwrap())
                .collect();
            let perturbed: Vec<f64> =
                params.to_vec().iter().map(|_| rng.random_range(-0.3..0.3)).collect();
            params.set_from(&perturbed).unwrap();
            if near_clip_boundary(&params, &prepared, &clip) {
                continue;
            }
            let out = policy_gradient(&params, &prepared, &clip).unwrap();
            let fd = central_difference(&params, &prepared, &clip, 1e-6);
            for (a, n) in out.grad.iter().zip(&fd) {
                assert!(relative_error(*a, *n) <= 1e-5, "{a} vs {n}");
            }
            checked += 1;
        }
        assert!(checked >= 100);
    }

    fn config(batch: usize, mini: usize) -> GrpoConfig {
        GrpoConfig {
            train_batch_size: batch,
            mini_batch_size: mini,
            grad_updates_per_iteration: batch / mini,
            learning_rate: 0.5,
            ..GrpoConfig::default()
        }
    }

    fn batch_of(n: usize, params: &mut PolicyParams, seed: u64) -> Vec<TrainGroup> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let id = format!("q{i}");
                let slot = params.add_problem(&id);
                let samples: Vec<Vec<u8>> = (0..4).map(|_| params.sample(slot, &mut rng)).collect();
                let rewards = samples.iter().map(|s| f64::from(s[0] == 0)).collect();
                TrainGroup {
                    problem_id: id,
                    samples,
                    rewards,
                }
            })
            .collect()
    }

    #[test]
    fn iteration_is_reproducible() {
        let mut a = PolicyParams::new(4, 2).unwrap();
        let batch = batch_of(8, &mut a, 5);
        let mut b = a.clone();
        let cfg = config(8, 4);
        let sa = train_iteration(&mut a, &batch, &cfg).unwrap();
        let sb = train_iteration(&mut b, &batch, &cfg).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn iteration_rejects_bad_batches() {
        let mut p = PolicyParams::new(4, 2).unwrap();
        let batch = batch_of(6, &mut p, 1);
        assert!(matches!(
            train_iteration(&mut p, &batch, &config(6, 4)),
            Err(Error::BatchNotDivisible { .. })
        ));
        assert!(train_iteration(&mut p, &batch[..4], &config(8, 4)).is_err());
    }

    #[test]
    fn reward_raises_target_probability() {
        let mut p = PolicyParams::new(4, 2).unwrap();
        let cfg = config(8, 4);
        let before: f64 = (0..8).map(|i| {
            let s = p.add_problem(&format!("q{i}"));
            p.probs(s, 0)[0]
        }).sum();
        for seed in 0..10 {
            let batch = batch_of(8, &mut p, seed);
            train_iteration(&mut p, &batch, &cfg).unwrap();
        }
        let after: f64 = (0..8).map(|i| p.probs(p.slot(&format!("q{i}")).unwrap(), 0)[0]).sum();
        assert!(after > before);
    }
}
