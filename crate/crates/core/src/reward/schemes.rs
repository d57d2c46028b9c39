//! Level-based partial credit for code problems.
//!
//! Strict credit pays level `l` only when every test in levels `1..=l`
//! passes. Soft credit splits each level's weight evenly over its tests.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::reward::levels::DifficultyGrouping;

/// A grouping resolved against a fixed test order, so rewards can be
/// computed from pass bit-vectors without string lookups.
#[derive(Debug, Clone)]
pub struct CompiledGrouping {
    levels: Vec<(Vec<usize>, f64)>,
    num_tests: usize,
}

impl CompiledGrouping {
    pub fn new<S: AsRef<str>>(grouping: &DifficultyGrouping, test_order: &[S]) -> Result<Self> {
        let index_of = |id: &str| {
            test_order
                .iter()
                .position(|t| t.as_ref() == id)
                .ok_or_else(|| Error::UnknownTest(id.to_string()))
        };
        let levels = grouping
            .levels
            .iter()
            .map(|l| {
                let idx = l.tests.iter().map(|t| index_of(t)).collect::<Result<Vec<_>>>()?;
                Ok((idx, l.weight))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            levels,
            num_tests: test_order.len(),
        })
    }

    /// Uses the grouping's own test order (levels flattened).
    pub fn from_grouping(grouping: &DifficultyGrouping) -> Self {
        let order: Vec<&str> = grouping.pass_rates.keys().map(String::as_str).collect();
        Self::new(grouping, &order).expect("grouping covers its own tests")
    }

    pub fn num_tests(&self) -> usize {
        self.num_tests
    }

    fn check(&self, passed: &[bool]) -> Result<()> {
        if passed.len() != self.num_tests {
            return Err(Error::ShapeMismatch(format!(
                "{} pass bits for {} tests",
                passed.len(),
                self.num_tests
            )));
        }
        Ok(())
    }

    pub fn strict(&self, passed: &[bool]) -> Result<f64> {
        self.check(passed)?;
        let mut total = 0.0;
        for (tests, weight) in &self.levels {
            if !tests.iter().all(|&i| passed[i]) {
                break;
            }
            total += weight;
        }
        Ok(total.min(1.0))
    }

    pub fn soft(&self, passed: &[bool]) -> Result<f64> {
        self.check(passed)?;
        let mut total = 0.0;
        for (tests, weight) in &self.levels {
            let hit = tests.iter().filter(|&&i| passed[i]).count();
            total += weight * hit as f64 / tests.len() as f64;
        }
        Ok(total.min(1.0))
    }
}

fn passed_bits<S: AsRef<str>>(passed: &[S], grouping: &DifficultyGrouping) -> Result<Vec<bool>> {
    let mut bits = vec![false; grouping.pass_rates.len()];
    let set: HashSet<&str> = passed.iter().map(AsRef::as_ref).collect();
    for id in set {
        let i = grouping
            .pass_rates
            .get_index_of(id)
            .ok_or_else(|| Error::UnknownTest(id.to_string()))?;
        bits[i] = true;
    }
    Ok(bits)
}

pub fn strict_reward<S: AsRef<str>>(passed: &[S], grouping: &DifficultyGrouping) -> Result<f64> {
    let bits = passed_bits(passed, grouping)?;
    CompiledGrouping::from_grouping(grouping).strict(&bits)
}

pub fn soft_reward<S: AsRef<str>>(passed: &[S], grouping: &DifficultyGrouping) -> Result<f64> {
    let bits = passed_bits(passed, grouping)?;
    CompiledGrouping::from_grouping(grouping).soft(&bits)
}
