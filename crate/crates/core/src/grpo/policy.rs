//! A small categorical sequence policy.
//!
//! Each response is a fixed-length token sequence. The distribution at
//! position `j` of problem `q` is `softmax((problem[q, j] + shared[j]) / T)`,
//! so problems train their own table but also share one position table.
//! Tokens render as lowercase letters, which lets math answers go through the
//! normal answer checker and code tests compare characters at positions.

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Domain, Outcome, ProblemSpec};
use crate::reward::TestExecutor;

pub const MAX_VOCAB: usize = 26;
pub const MAX_SEQ_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    vocab: usize,
    seq_len: usize,
    slots: IndexMap<String, usize>,
    logits: Vec<f64>,
    shared: Vec<f64>,
    pub temperature: f64,
    pub top_p: f64,
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn render(tokens: &[u8]) -> String {
    tokens.iter().map(|t| (b'a' + t) as char).collect()
}

pub fn parse_tokens(s: &str) -> Result<Vec<u8>> {
    s.bytes()
        .map(|b| match b {
            b'a'..=b'z' => Ok(b - b'a'),
            _ => Err(Error::InvalidArgument(format!("{s:?} is not a token string"))),
        })
        .collect()
}

fn parse_positions(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad position list {s:?}")))
        })
        .collect()
}

impl PolicyParams {
    pub fn new(vocab: usize, seq_len: usize) -> Result<Self> {
        if !(2..=MAX_VOCAB).contains(&vocab) || !(1..=MAX_SEQ_LEN).contains(&seq_len) {
            return Err(Error::InvalidConfig(format!(
                "toy policy needs vocab in 2..={MAX_VOCAB} and length in 1..={MAX_SEQ_LEN}"
            )));
        }
        Ok(Self {
            vocab,
            seq_len,
            slots: IndexMap::new(),
            logits: Vec::new(),
            shared: vec![0.0; vocab * seq_len],
            temperature: 1.0,
            top_p: 1.0,
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn num_problems(&self) -> usize {
        self.slots.len()
    }

    pub fn num_params(&self) -> usize {
        self.logits.len() + self.shared.len()
    }

    pub fn slot(&self, problem_id: &str) -> Option<usize> {
        self.slots.get(problem_id).copied()
    }

    pub fn add_problem(&mut self, problem_id: &str) -> usize {
        if let Some(s) = self.slot(problem_id) {
            return s;
        }
        let slot = self.slots.len();
        self.slots.insert(problem_id.to_string(), slot);
        self.logits.extend(std::iter::repeat_n(0.0, self.vocab * self.seq_len));
        slot
    }

    pub(crate) fn block(&self) -> usize {
        self.vocab * self.seq_len
    }

    /// Flat index of `problem[slot, pos, tok]`. Shared entries follow all
    /// problem entries.
    pub fn problem_index(&self, slot: usize, pos: usize, tok: usize) -> usize {
        slot * self.block() + pos * self.vocab + tok
    }

    pub fn shared_index(&self, pos: usize, tok: usize) -> usize {
        self.logits.len() + pos * self.vocab + tok
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.logits.clone();
        v.extend_from_slice(&self.shared);
        v
    }

    pub fn set_from(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let (a, b) = flat.split_at(self.logits.len());
        self.logits.copy_from_slice(a);
        self.shared.copy_from_slice(b);
        Ok(())
    }

    pub fn get(&self, index: usize) -> f64 {
        if index < self.logits.len() {
            self.logits[index]
        } else {
            self.shared[index - self.logits.len()]
        }
    }

    pub fn set(&mut self, index: usize, value: f64) {
        if index < self.logits.len() {
            self.logits[index] = value;
        } else {
            let n = self.logits.len();
            self.shared[index - n] = value;
        }
    }

    /// `params -= step * grad`.
    pub fn apply_step(&mut self, grad: &[f64], step: f64) -> Result<()> {
        if grad.len() != self.num_params() {
            return Err(Error::ShapeMismatch("gradient length".into()));
        }
        let (a, b) = grad.split_at(self.logits.len());
        for (p, g) in self.logits.iter_mut().zip(a) {
            *p -= step * g;
        }
        for (p, g) in self.shared.iter_mut().zip(b) {
            *p -= step * g;
        }
        if self.to_vec().iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup);
        }
        Ok(())
    }

    /// Sets the problem logits at `pos` so `token` has probability `prob`
    /// and every other token shares the remainder equally.
    pub fn bias_toward(&mut self, slot: usize, pos: usize, token: u8, prob: f64) {
        let prob = prob.clamp(1e-12, 1.0 - 1e-12);
        let bonus = (prob * (self.vocab - 1) as f64 / (1.0 - prob)).ln() * self.temperature;
        for tok in 0..self.vocab {
            let i = self.problem_index(slot, pos, tok);
            self.logits[i] = if tok == token as usize { bonus } else { 0.0 };
        }
    }

    fn scaled_logits(&self, slot: usize, pos: usize) -> Vec<f64> {
        let base = slot * self.block() + pos * self.vocab;
        let shared = pos * self.vocab;
        (0..self.vocab)
            .map(|k| (self.logits[base + k] + self.shared[shared + k]) / self.temperature)
            .collect()
    }

    pub fn probs(&self, slot: usize, pos: usize) -> Vec<f64> {
        let z = self.scaled_logits(slot, pos);
        let lse = log_sum_exp(&z);
        z.iter().map(|v| (v - lse).exp()).collect()
    }

    pub fn log_prob(&self, slot: usize, pos: usize, token: u8) -> f64 {
        let z = self.scaled_logits(slot, pos);
        z[token as usize] - log_sum_exp(&z)
    }

    pub fn sequence_log_probs(&self, slot: usize, tokens: &[u8]) -> Vec<f64> {
        tokens
            .iter()
            .enumerate()
            .map(|(pos, &t)| self.log_prob(slot, pos, t))
            .collect()
    }

    pub fn entropy(&self, slot: usize, pos: usize) -> f64 {
        self.probs(slot, pos)
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    }

    /// Samples one response. Nucleus truncation applies to sampling only;
    /// probabilities used for training are always the full softmax.
    pub fn sample<R: Rng + ?Sized>(&self, slot: usize, rng: &mut R) -> Vec<u8> {
        (0..self.seq_len)
            .map(|pos| {
                let probs = self.probs(slot, pos);
                sample_top_p(&probs, self.top_p, rng) as u8
            })
            .collect()
    }
}

fn sample_top_p<R: Rng + ?Sized>(probs: &[f64], top_p: f64, rng: &mut R) -> usize {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    let mut mass = 1.0;
    if top_p < 1.0 {
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let mut acc = 0.0;
        let mut keep = 0;
        for &i in &order {
            acc += probs[i];
            keep += 1;
            if acc >= top_p {
                break;
            }
        }
        order.truncate(keep);
        mass = acc;
    }
    let u: f64 = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    for &i in &order {
        acc += probs[i];
        if u < acc {
            return i;
        }
    }
    *order.last().expect("non-empty vocabulary")
}

/// Target token per position implied by a problem: the gold answer for math,
/// the union of test expectations for code. `None` where nothing is checked.
pub fn problem_target(problem: &ProblemSpec, seq_len: usize) -> Result<Vec<Option<u8>>> {
    let mut target = vec![None; seq_len];
    match problem.domain {
        Domain::Math => {
            let gold = problem.gold_answer.as_deref().unwrap_or_default();
            let tokens = parse_tokens(gold)?;
            if tokens.len() != seq_len {
                return Err(Error::ShapeMismatch(format!(
                    "gold answer of {} has {} tokens, policy length is {seq_len}",
                    problem.id,
                    tokens.len()
                )));
            }
            for (slot, t) in target.iter_mut().zip(tokens) {
                *slot = Some(t);
            }
        }
        Domain::Code => {
            for test in &problem.tests {
                for (pos, tok) in SequenceJudge::test_checks(problem, test)? {
                    if pos >= seq_len {
                        return Err(Error::ShapeMismatch(format!(
                            "test {} checks position {pos}",
                            test.id
                        )));
                    }
                    target[pos] = Some(tok);
                }
            }
        }
    }
    Ok(target)
}

/// Judges rendered token sequences. A code test lists positions in `input`
/// (comma separated) and the expected letters at those positions in
/// `expected`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SequenceJudge;

impl SequenceJudge {
    pub fn test_checks(
        problem: &ProblemSpec,
        test: &crate::model::TestCase,
    ) -> Result<Vec<(usize, u8)>> {
        let (Some(input), Some(expected)) = (&test.input, &test.expected) else {
            return Err(Error::InvalidArgument(format!(
                "test {} of {} has no input/expected",
                test.id, problem.id
            )));
        };
        let positions = parse_positions(input)?;
        let tokens = parse_tokens(expected)?;
        if positions.len() != tokens.len() {
            return Err(Error::ShapeMismatch(format!("test {} positions vs expected", test.id)));
        }
        Ok(positions.into_iter().zip(tokens).collect())
    }

    pub fn outcome(&self, problem: &ProblemSpec, tokens: &[u8]) -> Result<Outcome> {
        match problem.domain {
            Domain::Math => Ok(Outcome::Answer(render(tokens))),
            Domain::Code => Ok(Outcome::Tests(self.execute(problem, &render(tokens))?)),
        }
    }
}

impl TestExecutor for SequenceJudge {
    fn execute(&self, problem: &ProblemSpec, program: &str) -> Result<Vec<bool>> {
        let tokens = parse_tokens(program)?;
        problem
            .tests
            .iter()
            .map(|t| {
                Ok(Self::test_checks(problem, t)?
                    .iter()
                    .all(|(pos, tok)| tokens.get(*pos) == Some(tok)))
            })
            .collect()
    }
}
