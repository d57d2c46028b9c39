//! Rule-based accuracy rewards.
//!
//! Math responses are checked against the gold answer; code responses are
//! scored from their per-test pass bits under one of three schemes. No
//! format or length terms are ever added.

mod levels;
mod math;
mod schemes;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use levels::{
    assign_difficulty_levels, assign_difficulty_levels_with, estimate_pass_rates, Binning,
    DifficultyGrouping, EmptyLevelPolicy, Level, LevelOptions, PassRates,
};
pub use math::math_verify;
pub use schemes::{soft_reward, strict_reward, CompiledGrouping};

use crate::error::{Error, Result};
use crate::model::{Domain, Outcome, ProblemSpec, Response, ResponseGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScheme {
    /// 1.0 only when every test passes. Ignores difficulty levels.
    #[default]
    BinaryAllTests,
    Strict,
    Soft,
}

impl std::str::FromStr for RewardScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "binary_all_tests" => Ok(Self::BinaryAllTests),
            "strict" => Ok(Self::Strict),
            "soft" => Ok(Self::Soft),
            other => Err(Error::InvalidArgument(format!("unknown reward scheme {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub scheme: RewardScheme,
    /// Number of difficulty levels `L`.
    pub levels: usize,
    #[serde(flatten)]
    pub level_options: LevelOptions,
    /// Per-level weights, easiest first. Uniform when absent.
    pub weights: Option<Vec<f64>>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            scheme: RewardScheme::BinaryAllTests,
            levels: 3,
            level_options: LevelOptions::default(),
            weights: None,
        }
    }
}

impl RewardConfig {
    pub fn with_scheme(scheme: RewardScheme) -> Self {
        Self {
            scheme,
            ..Self::default()
        }
    }

    pub fn group_tests(&self, problem_id: &str, pass_rates: &PassRates) -> Result<DifficultyGrouping> {
        let g = assign_difficulty_levels_with(problem_id, pass_rates, self.levels, self.level_options)?;
        match &self.weights {
            Some(w) => g.with_weights(w),
            None => Ok(g),
        }
    }
}

fn code_bits<'a>(response: &'a Response, problem: &ProblemSpec) -> Result<&'a [bool]> {
    let Outcome::Tests(bits) = &response.outcome else {
        return Err(Error::InvalidArgument(format!(
            "code response for {} carries no test outcomes",
            problem.id
        )));
    };
    if bits.len() != problem.tests.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} pass bits for {} tests",
            bits.len(),
            problem.tests.len()
        )));
    }
    Ok(bits)
}

/// Reward of one response. `grouping` overrides the grouping stored on the
/// problem.
pub fn score_response(
    response: &Response,
    problem: &ProblemSpec,
    scheme: RewardScheme,
    grouping: Option<&DifficultyGrouping>,
) -> Result<f64> {
    match problem.domain {
        Domain::Math => {
            let Outcome::Answer(answer) = &response.outcome else {
                return Err(Error::InvalidArgument(format!(
                    "math response for {} carries no answer",
                    problem.id
                )));
            };
            let gold = problem
                .gold_answer
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument(format!("{} has no gold answer", problem.id)))?;
            Ok(if math_verify(answer, gold) { 1.0 } else { 0.0 })
        }
        Domain::Code => {
            let bits = code_bits(response, problem)?;
            if scheme == RewardScheme::BinaryAllTests {
                return Ok(if bits.iter().all(|b| *b) { 1.0 } else { 0.0 });
            }
            let grouping = grouping
                .or(problem.grouping.as_ref())
                .ok_or_else(|| Error::MissingGrouping(problem.id.clone()))?;
            let ids: Vec<&str> = problem.tests.iter().map(|t| t.id.as_str()).collect();
            let compiled = CompiledGrouping::new(grouping, &ids)?;
            match scheme {
                RewardScheme::Strict => compiled.strict(bits),
                RewardScheme::Soft => compiled.soft(bits),
                RewardScheme::BinaryAllTests => unreachable!(),
            }
        }
    }
}

/// Scores every response of a group in place.
pub fn score_group(
    group: &mut ResponseGroup,
    problem: &ProblemSpec,
    scheme: RewardScheme,
) -> Result<()> {
    if group.problem_id != problem.id {
        return Err(Error::InvalidArgument(format!(
            "group for {} scored against {}",
            group.problem_id, problem.id
        )));
    }
    let compiled = match (problem.domain, scheme) {
        (Domain::Code, RewardScheme::Strict | RewardScheme::Soft) => {
            let grouping = problem
                .grouping
                .as_ref()
                .ok_or_else(|| Error::MissingGrouping(problem.id.clone()))?;
            let ids: Vec<&str> = problem.tests.iter().map(|t| t.id.as_str()).collect();
            Some(CompiledGrouping::new(grouping, &ids)?)
        }
        _ => None,
    };
    for r in &mut group.responses {
        let reward = match &compiled {
            Some(c) => {
                let bits = code_bits(r, problem)?;
                if scheme == RewardScheme::Strict {
                    c.strict(bits)?
                } else {
                    c.soft(bits)?
                }
            }
            None => score_response(r, problem, scheme, None)?,
        };
        r.reward = Some(reward);
    }
    Ok(())
}

/// Runs a program against a problem's tests. Only table-driven and
/// rule-based executors ship; untrusted code is never executed.
pub trait TestExecutor {
    fn execute(&self, problem: &ProblemSpec, program: &str) -> Result<Vec<bool>>;
}

/// Looks pass bits up in a fixed table keyed by (problem id, program).
#[derive(Debug, Clone, Default)]
pub struct TableExecutor {
    table: HashMap<(String, String), Vec<bool>>,
}

impl TableExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, problem_id: &str, program: &str, bits: Vec<bool>) {
        self.table
            .insert((problem_id.to_string(), program.to_string()), bits);
    }
}

impl TestExecutor for TableExecutor {
    fn execute(&self, problem: &ProblemSpec, program: &str) -> Result<Vec<bool>> {
        match self.table.get(&(problem.id.clone(), program.to_string())) {
            Some(bits) if bits.len() == problem.tests.len() => Ok(bits.clone()),
            Some(bits) => Err(Error::ShapeMismatch(format!(
                "{} table bits for {} tests",
                bits.len(),
                problem.tests.len()
            ))),
            None => Ok(vec![false; problem.tests.len()]),
        }
    }
}
