//! Offline pass-rate prefilter over a dataset.

use std::collections::HashMap;
use std::io::Read;

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::engine::seeded_rng;
use crate::error::{Error, Result};
use crate::model::{Domain, ProblemSpec};
use crate::sampler::{difficulty_prefilter, PrefilterDecision, RolloutSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefilterConfig {
    /// Rollouts per problem (`n`).
    pub rollouts: usize,
    pub source: RolloutSource,
    /// Solver-pool pass probability is the prior times this, capped at 1.
    pub solver_multiplier: f64,
}

impl Default for PrefilterConfig {
    fn default() -> Self {
        Self {
            rollouts: 16,
            source: RolloutSource::Policy,
            solver_multiplier: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefilterRecord {
    pub problem_id: String,
    pub domain: Domain,
    pub passed: usize,
    pub rollouts: usize,
    pub decision: PrefilterDecision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefilterOutcome {
    pub kept: Vec<ProblemSpec>,
    pub records: Vec<PrefilterRecord>,
}

#[derive(Debug, Deserialize)]
struct CountRow {
    problem_id: String,
    passed: usize,
    rollouts: usize,
}

/// Reads `problem_id,passed,rollouts` rows.
pub fn read_counts<R: Read>(reader: R) -> Result<HashMap<String, (usize, usize)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in ["problem_id", "passed", "rollouts"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::MissingColumn(col.into()));
        }
    }
    let mut counts = HashMap::new();
    for row in rdr.deserialize::<CountRow>() {
        let row = row?;
        counts.insert(row.problem_id, (row.passed, row.rollouts));
    }
    Ok(counts)
}

/// Filters `problems` using observed counts when given, otherwise simulated
/// Binomial counts drawn from each problem's prior.
pub fn prefilter_dataset(
    problems: &[ProblemSpec],
    config: &PrefilterConfig,
    counts: Option<&HashMap<String, (usize, usize)>>,
    seed: u64,
) -> Result<PrefilterOutcome> {
    if config.rollouts == 0 {
        return Err(Error::InvalidConfig("prefilter needs at least one rollout".into()));
    }
    if !(config.solver_multiplier.is_finite() && config.solver_multiplier >= 0.0) {
        return Err(Error::InvalidConfig("solver_multiplier must be >= 0".into()));
    }
    let mut kept = Vec::new();
    let mut records = Vec::with_capacity(problems.len());
    for (i, p) in problems.iter().enumerate() {
        let (passed, rollouts) = match counts {
            Some(c) => *c
                .get(&p.id)
                .ok_or_else(|| Error::UnknownProblem(p.id.clone()))?,
            None => {
                let prior = p.metadata.difficulty_prior;
                let prob = match config.source {
                    RolloutSource::Policy => prior,
                    RolloutSource::SolverPool => (prior * config.solver_multiplier).min(1.0),
                };
                let binomial = Binomial::new(config.rollouts as u64, prob.clamp(0.0, 1.0))
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.id)))?;
                let k = binomial.sample(&mut seeded_rng(&[seed, 31, i as u64]));
                (k as usize, config.rollouts)
            }
        };
        let decision = difficulty_prefilter(passed, rollouts, config.source, p.domain)?;
        if decision == PrefilterDecision::Keep {
            kept.push(p.clone());
        }
        records.push(PrefilterRecord {
            problem_id: p.id.clone(),
            domain: p.domain,
            passed,
            rollouts,
            decision,
        });
    }
    Ok(PrefilterOutcome { kept, records })
}
