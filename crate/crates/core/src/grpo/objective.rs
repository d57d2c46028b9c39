//! Token-level clipped surrogate with asymmetric clip bounds.
//!
//! For each token the surrogate is `min(r * A, clip(r, 1 - eps_low,
//! 1 + eps_high) * A)`; the objective averages it over every token in the
//! batch. There is no KL term, so reference-policy probabilities never enter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipRange {
    pub eps_low: f64,
    pub eps_high: f64,
}

impl ClipRange {
    pub fn new(eps_low: f64, eps_high: f64) -> Result<Self> {
        if !(eps_low > 0.0 && eps_high > 0.0 && eps_high >= eps_low) {
            return Err(Error::InvalidConfig(format!(
                "clip range needs 0 < eps_low <= eps_high, got {eps_low}/{eps_high}"
            )));
        }
        Ok(Self { eps_low, eps_high })
    }

    pub fn clamp(&self, ratio: f64) -> f64 {
        ratio.clamp(1.0 - self.eps_low, 1.0 + self.eps_high)
    }

    /// Surrogate value and whether the clipped branch is the active minimum.
    pub fn surrogate(&self, ratio: f64, advantage: f64) -> (f64, bool) {
        let unclipped = ratio * advantage;
        let clipped = self.clamp(ratio) * advantage;
        if clipped < unclipped {
            (clipped, true)
        } else {
            (unclipped, false)
        }
    }

    /// Derivative of the surrogate with respect to the ratio.
    pub fn surrogate_grad(&self, ratio: f64, advantage: f64) -> f64 {
        match self.surrogate(ratio, advantage) {
            (_, true) => 0.0,
            (_, false) => advantage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub objective: f64,
    pub loss: f64,
    pub clip_fraction: f64,
    pub tokens: usize,
}

/// Evaluates the surrogate objective.
///
/// `ratios[i][j]` is the probability ratio of token `j` of response `i`;
/// `advantages[i]` is broadcast over the response's tokens.
pub fn grpo_objective(
    ratios: &[Vec<f64>],
    advantages: &[f64],
    lengths: &[usize],
    clip: &ClipRange,
) -> Result<ObjectiveValue> {
    if ratios.len() != advantages.len() || ratios.len() != lengths.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ratio rows, {} advantages, {} lengths",
            ratios.len(),
            advantages.len(),
            lengths.len()
        )));
    }
    let mut total = 0.0;
    let mut tokens = 0usize;
    let mut clipped = 0usize;
    for ((row, &adv), &len) in ratios.iter().zip(advantages).zip(lengths) {
        if row.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "response of length {len} has {} ratios",
                row.len()
            )));
        }
        for &ratio in row {
            if !(ratio > 0.0 && ratio.is_finite()) {
                return Err(Error::InvalidArgument(format!("ratio {ratio} must be > 0")));
            }
            let (value, was_clipped) = clip.surrogate(ratio, adv);
            total += value;
            clipped += usize::from(was_clipped);
        }
        tokens += len;
    }
    if tokens == 0 {
        return Err(Error::ShapeMismatch("no tokens".into()));
    }
    let objective = total / tokens as f64;
    Ok(ObjectiveValue {
        objective,
        loss: -objective,
        clip_fraction: clipped as f64 / tokens as f64,
        tokens,
    })
}
