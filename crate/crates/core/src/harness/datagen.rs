//! Synthetic problem sets for the toy policy.
//!
//! Every problem has a hidden target token string. Math problems are solved
//! by producing the whole string; code problems carry tests that each check
//! a subset of positions, the last test checking all of them. Test pass
//! probabilities follow from a per-position accuracy of `prior^(1/len)`, so
//! a full pass has probability `prior` under the initial policy.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::engine::seeded_rng;
use crate::error::{Error, Result};
use crate::grpo::policy::{render, MAX_SEQ_LEN, MAX_VOCAB};
use crate::model::{ProblemSpec, TestCase};
use crate::reward::{assign_difficulty_levels_with, Binning, LevelOptions, PassRates};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PriorDistribution {
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
    Beta { a: f64, b: f64 },
}

impl PriorDistribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Fixed { value } => (0.0..=1.0).contains(&value),
            Self::Uniform { low, high } => 0.0 <= low && low <= high && high <= 1.0,
            Self::Beta { a, b } => a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad prior distribution {self:?}")))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        Ok(match *self {
            Self::Fixed { value } => value,
            Self::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Self::Beta { a, b } => Beta::new(a, b)
                .map_err(|e| Error::InvalidConfig(format!("prior: {e}")))?
                .sample(rng),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub math_problems: usize,
    pub code_problems: usize,
    pub prior: PriorDistribution,
    /// Share of problems given `hard_prior` instead of a drawn prior.
    pub hard_fraction: f64,
    pub hard_prior: f64,
    pub tests_per_problem: usize,
    /// Difficulty levels `L` for code tests.
    pub levels: usize,
    pub seq_len: usize,
    pub vocab: usize,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            math_problems: 128,
            code_problems: 128,
            prior: PriorDistribution::Beta { a: 1.5, b: 1.5 },
            hard_fraction: 0.15,
            hard_prior: 1e-6,
            tests_per_problem: 6,
            levels: 3,
            seq_len: 6,
            vocab: 8,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.math_problems + self.code_problems == 0 {
            return Err(Error::InvalidConfig("dataset needs at least one problem".into()));
        }
        if !(1..=MAX_SEQ_LEN).contains(&self.seq_len) || !(2..=MAX_VOCAB).contains(&self.vocab) {
            return Err(Error::InvalidConfig(format!(
                "seq_len must be in 1..={MAX_SEQ_LEN} and vocab in 2..={MAX_VOCAB}"
            )));
        }
        if self.code_problems > 0 {
            if self.tests_per_problem == 0 || self.levels == 0 {
                return Err(Error::InvalidConfig("code problems need tests and levels".into()));
            }
            if self.levels > self.tests_per_problem {
                return Err(Error::MoreLevelsThanTests {
                    levels: self.levels,
                    tests: self.tests_per_problem,
                });
            }
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) || !(0.0..=1.0).contains(&self.hard_prior) {
            return Err(Error::InvalidConfig("hard fraction and prior must lie in [0, 1]".into()));
        }
        self.prior.validate()
    }
}

/// Size of the `k`-th of `n` tests: spread from 1 position up to all of them.
fn test_size(k: usize, n: usize, len: usize) -> usize {
    if n == 1 {
        return len;
    }
    1 + (k * (len - 1) + (n - 1) / 2) / (n - 1)
}

pub fn generate_dataset(spec: &SyntheticTaskSpec, seed: u64) -> Result<Vec<ProblemSpec>> {
    spec.validate()?;
    let total = spec.math_problems + spec.code_problems;
    let width = total.to_string().len().max(4);
    let test_width = spec.tests_per_problem.to_string().len().max(2);
    let mut problems = Vec::with_capacity(total);
    for i in 0..total {
        let mut rng = seeded_rng(&[seed, 11, i as u64]);
        let prior = if rng.random::<f64>() < spec.hard_fraction {
            spec.hard_prior
        } else {
            spec.prior.sample(&mut rng)?
        };
        let target: Vec<u8> = (0..spec.seq_len)
            .map(|_| rng.random_range(0..spec.vocab) as u8)
            .collect();
        if i < spec.math_problems {
            problems.push(ProblemSpec::math(format!("m{i:0width$}"), render(&target), prior));
            continue;
        }
        let id = format!("c{i:0width$}");
        let per_position = prior.powf(1.0 / spec.seq_len as f64);
        let mut tests = Vec::with_capacity(spec.tests_per_problem);
        let mut rates = PassRates::new();
        for k in 0..spec.tests_per_problem {
            let size = test_size(k, spec.tests_per_problem, spec.seq_len);
            let mut positions: Vec<usize> = if size == spec.seq_len {
                (0..spec.seq_len).collect()
            } else {
                sample(&mut rng, spec.seq_len, size).into_vec()
            };
            positions.sort_unstable();
            let expected: Vec<u8> = positions.iter().map(|&p| target[p]).collect();
            let p = per_position.powi(size as i32);
            let test_id = format!("t{:0test_width$}", k + 1);
            let mut test = TestCase::simulated(test_id.clone(), p);
            test.input = Some(
                positions
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            test.expected = Some(render(&expected));
            rates.insert(test_id, p);
            tests.push(test);
        }
        let mut problem = ProblemSpec::code(id.clone(), tests, prior);
        // Quantile binning keeps every level populated even when many tests
        // share a pass rate.
        let grouping = assign_difficulty_levels_with(
            &id,
            &rates,
            spec.levels,
            LevelOptions {
                binning: Binning::Quantile,
                ..LevelOptions::default()
            },
        )?;
        problem.set_grouping(grouping)?;
        problems.push(problem);
    }
    Ok(problems)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_dataset, Domain};

    #[test]
    fn deterministic() {
        let spec = SyntheticTaskSpec {
            math_problems: 10,
            code_problems: 5,
            ..SyntheticTaskSpec::default()
        };
        let a = generate_dataset(&spec, 7).unwrap();
        let b = generate_dataset(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_dataset(&spec, 8).unwrap());
        assert!(validate_dataset(&a).is_empty());
        assert_eq!(a.iter().filter(|p| p.domain == Domain::Code).count(), 5);
    }

    #[test]
    fn two_tests_per_level() {
        let spec = SyntheticTaskSpec {
            math_problems: 0,
            code_problems: 20,
            tests_per_problem: 6,
            levels: 3,
            ..SyntheticTaskSpec::default()
        };
        for p in generate_dataset(&spec, 1).unwrap() {
            let g = p.grouping.as_ref().unwrap();
            let sizes: Vec<usize> = g.levels.iter().map(|l| l.tests.len()).collect();
            assert_eq!(sizes, vec![2, 2, 2], "{}", p.id);
        }
    }

    #[test]
    fn impossible_spec() {
        let spec = SyntheticTaskSpec {
            tests_per_problem: 2,
            levels: 3,
            ..SyntheticTaskSpec::default()
        };
        assert!(matches!(
            generate_dataset(&spec, 0),
            Err(Error::MoreLevelsThanTests { .. })
        ));
    }

    #[test]
    fn test_sizes_cover_range() {
        let sizes: Vec<usize> = (0..6).map(|k| test_size(k, 6, 6)).collect();
        assert_eq!(sizes.first(), Some(&1));
        assert_eq!(sizes.last(), Some(&6));
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
    }
}
