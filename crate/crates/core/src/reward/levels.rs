//! Per-test pass-rate estimation and clustering of tests into difficulty
//! levels. Level 1 holds the tests most solutions pass.

use std::cmp::Ordering;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Outcome, ProblemSpec, Response};

pub type PassRates = IndexMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Level `l` of `L` covers pass rates in `((L-l)/L, (L-l+1)/L]`; zero
    /// lands in level `L`.
    #[default]
    EqualWidth,
    /// Tests sorted by pass rate (descending, ties by id) and split into `L`
    /// contiguous chunks whose sizes differ by at most one.
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyLevelPolicy {
    #[default]
    Reject,
    /// Drop empty levels, renumber the rest and spread weight uniformly.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LevelOptions {
    #[serde(default)]
    pub binning: Binning,
    #[serde(default)]
    pub empty_levels: EmptyLevelPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub index: usize,
    pub tests: Vec<String>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyGrouping {
    pub problem_id: String,
    pub levels: Vec<Level>,
    pub pass_rates: PassRates,
}

impl DifficultyGrouping {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn num_tests(&self) -> usize {
        self.levels.iter().map(|l| l.tests.len()).sum()
    }

    pub fn level_of(&self, test_id: &str) -> Option<usize> {
        self.levels
            .iter()
            .find(|l| l.tests.iter().any(|t| t == test_id))
            .map(|l| l.index)
    }

    pub fn contains(&self, test_id: &str) -> bool {
        self.level_of(test_id).is_some()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.weight).collect()
    }

    /// Replaces the level weights. Weights must be non-negative with a
    /// positive sum; they are normalized to sum to one.
    pub fn with_weights(mut self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.levels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} levels",
                weights.len(),
                self.levels.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("level weights must be >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("level weights sum to zero".into()));
        }
        for (level, w) in self.levels.iter_mut().zip(weights) {
            level.weight = w / total;
        }
        Ok(self)
    }

    /// Checks the partition, weight and ordering invariants.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, level) in self.levels.iter().enumerate() {
            if level.index != i + 1 {
                return Err(Error::InvalidArgument(format!(
                    "level at position {i} has index {}",
                    level.index
                )));
            }
            for t in &level.tests {
                if !self.pass_rates.contains_key(t) {
                    return Err(Error::UnknownTest(t.clone()));
                }
                if !seen.insert(t.as_str()) {
                    return Err(Error::InvalidArgument(format!("test {t} in two levels")));
                }
            }
        }
        if seen.len() != self.pass_rates.len() {
            return Err(Error::InvalidArgument("levels do not cover every test".into()));
        }
        let total: f64 = self.levels.iter().map(|l| l.weight).sum();
        if (total - 1.0).abs() > 1e-9 || self.levels.iter().any(|l| l.weight < 0.0) {
            return Err(Error::InvalidArgument(format!("level weights sum to {total}")));
        }
        for pair in self.levels.windows(2) {
            let min_easier = pair[0]
                .tests
                .iter()
                .map(|t| self.pass_rates[t])
                .fold(f64::INFINITY, f64::min);
            let max_harder = pair[1]
                .tests
                .iter()
                .map(|t| self.pass_rates[t])
                .fold(f64::NEG_INFINITY, f64::max);
            if min_easier < max_harder {
                return Err(Error::InvalidArgument(format!(
                    "level {} is easier than level {}",
                    pair[1].index, pair[0].index
                )));
            }
        }
        Ok(())
    }
}

/// Fraction of solutions in the pool that pass each test of the problem.
pub fn estimate_pass_rates(problem: &ProblemSpec, solution_pool: &[Response]) -> Result<PassRates> {
    if solution_pool.is_empty() {
        return Err(Error::NoSolutions);
    }
    let mut counts = vec![0usize; problem.tests.len()];
    for r in solution_pool {
        let Outcome::Tests(bits) = &r.outcome else {
            return Err(Error::InvalidArgument(format!(
                "solution for {} has no test outcomes",
                r.problem_id
            )));
        };
        if bits.len() != problem.tests.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} pass bits for {} tests",
                bits.len(),
                problem.tests.len()
            )));
        }
        for (c, b) in counts.iter_mut().zip(bits) {
            *c += usize::from(*b);
        }
    }
    let n = solution_pool.len() as f64;
    Ok(problem
        .tests
        .iter()
        .zip(counts)
        .map(|(t, c)| (t.id.clone(), c as f64 / n))
        .collect())
}

fn by_difficulty(a: &(&String, f64), b: &(&String, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(b.0))
}

/// Equal-width bin for pass rate `p`: bins are closed above, and `p = 0`
/// falls into the hardest level.
pub(crate) fn equal_width_level(p: f64, levels: usize) -> usize {
    if p <= 0.0 {
        return levels;
    }
    let mut x = p * levels as f64;
    let snapped = x.round();
    if (x - snapped).abs() <= 1e-9 * levels as f64 {
        x = snapped;
    }
    let level = levels as i64 - x.ceil() as i64 + 1;
    level.clamp(1, levels as i64) as usize
}

pub fn assign_difficulty_levels(
    problem_id: &str,
    pass_rates: &PassRates,
    levels: usize,
) -> Result<DifficultyGrouping> {
    assign_difficulty_levels_with(problem_id, pass_rates, levels, LevelOptions::default())
}

pub fn assign_difficulty_levels_with(
    problem_id: &str,
    pass_rates: &PassRates,
    levels: usize,
    opts: LevelOptions,
) -> Result<DifficultyGrouping> {
    if levels == 0 {
        return Err(Error::InvalidArgument("level count must be >= 1".into()));
    }
    if levels > pass_rates.len() {
        return Err(Error::MoreLevelsThanTests {
            levels,
            tests: pass_rates.len(),
        });
    }
    if let Some((t, p)) = pass_rates
        .iter()
        .find(|(_, p)| !p.is_finite() || !(0.0..=1.0).contains(*p))
    {
        return Err(Error::InvalidArgument(format!(
            "pass rate {p} of test {t} outside [0,1]"
        )));
    }

    let mut sorted: Vec<(&String, f64)> = pass_rates.iter().map(|(t, p)| (t, *p)).collect();
    sorted.sort_by(by_difficulty);

    let mut buckets: Vec<Vec<String>> = vec![Vec::new(); levels];
    match opts.binning {
        Binning::EqualWidth => {
            for (t, p) in &sorted {
                buckets[equal_width_level(*p, levels) - 1].push((*t).clone());
            }
        }
        Binning::Quantile => {
            let n = sorted.len();
            let base = n / levels;
            let extra = n % levels;
            let mut it = sorted.iter();
            for (l, bucket) in buckets.iter_mut().enumerate() {
                let size = base + usize::from(l < extra);
                bucket.extend(it.by_ref().take(size).map(|(t, _)| (*t).clone()));
            }
        }
    }

    if let Some(empty) = buckets.iter().position(Vec::is_empty) {
        match opts.empty_levels {
            EmptyLevelPolicy::Reject => return Err(Error::EmptyLevel(empty + 1)),
            EmptyLevelPolicy::Drop => buckets.retain(|b| !b.is_empty()),
        }
    }

    let weight = 1.0 / buckets.len() as f64;
    let levels = buckets
        .into_iter()
        .enumerate()
        .map(|(i, tests)| Level {
            index: i + 1,
            tests,
            weight,
        })
        .collect();
    Ok(DifficultyGrouping {
        problem_id: problem_id.to_string(),
        levels,
        pass_rates: pass_rates.clone(),
    })
}
