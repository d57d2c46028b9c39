//! Domain types shared by every module: problems, responses, scored groups.
//!
//! A dataset is a list of [`ProblemSpec`] records stored one per line as JSON.
//! Problems are immutable once loaded; responses gain a reward exactly once,
//! when the reward module scores them.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::DifficultyGrouping;

/// Default number of responses sampled per problem.
pub const DEFAULT_GROUP_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Math,
    Code,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Math => f.write_str("math"),
            Domain::Code => f.write_str("code"),
        }
    }
}

/// One unit test of a code problem.
///
/// Live judging uses `input`/`expected`; the simulator uses
/// `pass_probability`. A record may carry both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_probability: Option<f64>,
    /// Difficulty level, 1 = easiest. Set by the reward module.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
}

impl TestCase {
    pub fn simulated(id: impl Into<String>, pass_probability: f64) -> Self {
        Self {
            id: id.into(),
            input: None,
            expected: None,
            pass_probability: Some(pass_probability),
            level: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemMetadata {
    /// Probability that a single sampled response fully solves the problem.
    pub difficulty_prior: f64,
}

impl Default for ProblemMetadata {
    fn default() -> Self {
        Self {
            difficulty_prior: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub id: String,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tests: Vec<TestCase>,
    #[serde(default)]
    pub metadata: ProblemMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<DifficultyGrouping>,
}

impl ProblemSpec {
    pub fn math(id: impl Into<String>, gold: impl Into<String>, prior: f64) -> Self {
        Self {
            id: id.into(),
            domain: Domain::Math,
            gold_answer: Some(gold.into()),
            tests: Vec::new(),
            metadata: ProblemMetadata {
                difficulty_prior: prior,
            },
            grouping: None,
        }
    }

    pub fn code(id: impl Into<String>, tests: Vec<TestCase>, prior: f64) -> Self {
        Self {
            id: id.into(),
            domain: Domain::Code,
            gold_answer: None,
            tests,
            metadata: ProblemMetadata {
                difficulty_prior: prior,
            },
            grouping: None,
        }
    }

    pub fn test_index(&self, test_id: &str) -> Option<usize> {
        self.tests.iter().position(|t| t.id == test_id)
    }

    /// Attaches a grouping and copies its level assignment onto the tests.
    pub fn set_grouping(&mut self, grouping: DifficultyGrouping) -> Result<()> {
        for test in &mut self.tests {
            test.level = Some(
                grouping
                    .level_of(&test.id)
                    .ok_or_else(|| Error::UnknownTest(test.id.clone()))?,
            );
        }
        self.grouping = Some(grouping);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Outcome {
    /// Final answer extracted from a math response.
    Answer(String),
    /// Per-test pass bits of a code response, in the problem's test order.
    Tests(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub problem_id: String,
    pub token_length: u32,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
}

impl Response {
    pub fn new(problem_id: impl Into<String>, token_length: u32, outcome: Outcome) -> Self {
        Self {
            problem_id: problem_id.into(),
            token_length: token_length.max(1),
            outcome,
            reward: None,
        }
    }

    pub fn scored(mut self, reward: f64) -> Self {
        self.reward = Some(reward);
        self
    }

    pub fn passes_all_tests(&self) -> bool {
        matches!(&self.outcome, Outcome::Tests(bits) if bits.iter().all(|b| *b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseGroup {
    pub problem_id: String,
    pub responses: Vec<Response>,
}

impl ResponseGroup {
    pub fn new(problem_id: impl Into<String>, responses: Vec<Response>) -> Self {
        Self {
            problem_id: problem_id.into(),
            responses,
        }
    }

    /// Builds a scored group directly from rewards. Handy for tests and for
    /// callers that only track scalar rewards.
    pub fn from_rewards(problem_id: impl Into<String>, rewards: &[f64]) -> Self {
        let problem_id = problem_id.into();
        let responses = rewards
            .iter()
            .map(|r| {
                Response::new(problem_id.clone(), 1, Outcome::Answer(String::new())).scored(*r)
            })
            .collect();
        Self {
            problem_id,
            responses,
        }
    }

    pub fn group_size(&self) -> usize {
        self.responses.len()
    }

    pub fn rewards(&self) -> Result<Vec<f64>> {
        self.responses
            .iter()
            .map(|r| r.reward.ok_or(Error::UnscoredGroup))
            .collect()
    }

    pub fn is_scored(&self) -> bool {
        self.responses.iter().all(|r| r.reward.is_some())
    }

    pub fn total_tokens(&self) -> u64 {
        self.responses.iter().map(|r| r.token_length as u64).sum()
    }

    pub fn longest_response(&self) -> u32 {
        self.responses
            .iter()
            .map(|r| r.token_length)
            .max()
            .unwrap_or(0)
    }

    pub fn mean_reward(&self) -> Result<f64> {
        let rewards = self.rewards()?;
        if rewards.is_empty() {
            return Ok(0.0);
        }
        Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
    }
}

/// Number of responses whose reward is exactly 1.0.
pub fn full_pass_count(group: &ResponseGroup) -> Result<usize> {
    let mut passed = 0;
    for r in &group.responses {
        match r.reward {
            Some(v) if v == 1.0 => passed += 1,
            Some(_) => {}
            None => return Err(Error::UnscoredGroup),
        }
    }
    Ok(passed)
}

/// Fraction of responses in the group with full reward. Partial credit
/// never counts as a pass.
pub fn pass_rate(group: &ResponseGroup) -> Result<f64> {
    let passed = full_pass_count(group)?;
    if group.responses.is_empty() {
        return Err(Error::DegenerateGroup(0));
    }
    Ok(passed as f64 / group.responses.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateId(String),
    EmptyTests(String),
    MissingGoldAnswer(String),
    UnexpectedTests(String),
    UnexpectedGoldAnswer(String),
    PriorOutOfRange(String),
    DuplicateTestId { problem: String, test: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId(id) => write!(f, "duplicate id {id}"),
            Violation::EmptyTests(id) => write!(f, "code problem {id} has no tests"),
            Violation::MissingGoldAnswer(id) => {
                write!(f, "math problem {id} has no gold answer")
            }
            Violation::UnexpectedTests(id) => write!(f, "math problem {id} carries tests"),
            Violation::UnexpectedGoldAnswer(id) => {
                write!(f, "code problem {id} carries a gold answer")
            }
            Violation::PriorOutOfRange(id) => {
                write!(f, "problem {id} has a difficulty prior outside [0,1]")
            }
            Violation::DuplicateTestId { problem, test } => {
                write!(f, "problem {problem} repeats test id {test}")
            }
        }
    }
}

pub fn validate_dataset(problems: &[ProblemSpec]) -> Vec<Violation> {
    let mut seen = HashSet::new();
    let mut violations = Vec::new();
    for p in problems {
        if !seen.insert(p.id.as_str()) {
            violations.push(Violation::DuplicateId(p.id.clone()));
        }
        let prior = p.metadata.difficulty_prior;
        if !(0.0..=1.0).contains(&prior) {
            violations.push(Violation::PriorOutOfRange(p.id.clone()));
        }
        match p.domain {
            Domain::Math => {
                if p.gold_answer.as_deref().is_none_or(|g| g.trim().is_empty()) {
                    violations.push(Violation::MissingGoldAnswer(p.id.clone()));
                }
                if !p.tests.is_empty() {
                    violations.push(Violation::UnexpectedTests(p.id.clone()));
                }
            }
            Domain::Code => {
                if p.tests.is_empty() {
                    violations.push(Violation::EmptyTests(p.id.clone()));
                }
                if p.gold_answer.is_some() {
                    violations.push(Violation::UnexpectedGoldAnswer(p.id.clone()));
                }
                let mut test_ids = HashSet::new();
                for t in &p.tests {
                    if !test_ids.insert(t.id.as_str()) {
                        violations.push(Violation::DuplicateTestId {
                            problem: p.id.clone(),
                            test: t.id.clone(),
                        });
                    }
                }
            }
        }
    }
    violations
}

pub fn read_dataset_from<R: Read>(reader: R) -> Result<Vec<ProblemSpec>> {
    let mut problems = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let problem: ProblemSpec = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidArgument(format!("dataset line {}: {e}", lineno + 1))
        })?;
        problems.push(problem);
    }
    Ok(problems)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<ProblemSpec>> {
    read_dataset_from(std::fs::File::open(path)?)
}

pub fn write_dataset_to<W: Write>(writer: W, problems: &[ProblemSpec]) -> Result<()> {
    let mut out = BufWriter::new(writer);
    for p in problems {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, problems: &[ProblemSpec]) -> Result<()> {
    write_dataset_to(std::fs::File::create(path)?, problems)
}
