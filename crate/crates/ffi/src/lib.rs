//! C ABI over `rlrollout`.
//!
//! Every fallible function returns an [`RlrStatus`]; on failure the message
//! is kept per thread and read with [`rlr_last_error`]. Outputs go through
//! caller-provided pointers and are written only on success. Handles are
//! opaque and must be released with their `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use rlrollout::engine::{Mode, SimConfig, Simulation, StepMetrics, SyntheticWorkload};
use rlrollout::grpo::{compute_advantages, grpo_objective, ClipRange};
use rlrollout::reward::{
    assign_difficulty_levels_with, math_verify, Binning, CompiledGrouping, DifficultyGrouping, LevelOptions,
    PassRates,
};
use rlrollout::Error;

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidConfig = 4,
    ShapeMismatch = 5,
    /// Difficulty grouping could not be built or does not match the tests.
    Grouping = 6,
    DegenerateGroup = 7,
    Numerical = 8,
    DatasetExhausted = 9,
    Unreachable = 10,
    Io = 11,
    Panic = 12,
    Internal = 13,
}

/// Scheduling modes, in the order of `Mode::ALL`.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlrMode {
    Static = 0,
    NaiveDynamic = 1,
    Continuous = 2,
    AsyncReward = 3,
    Seamless = 4,
    SeamlessBlockingReward = 5,
}

impl From<Mode> for RlrMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Static => RlrMode::Static,
            Mode::NaiveDynamic => RlrMode::NaiveDynamic,
            Mode::Continuous => RlrMode::Continuous,
            Mode::SeamlessMinusEarlyTerm => RlrMode::AsyncReward,
            Mode::Seamless => RlrMode::Seamless,
            Mode::SeamlessMinusAsync => RlrMode::SeamlessBlockingReward,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlrObjective {
    pub objective: f64,
    pub loss: f64,
    pub clip_fraction: f64,
    pub tokens: usize,
}

/// Metrics of one simulated training step. Times are simulated seconds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlrStepMetrics {
    pub mode: RlrMode,
    pub seed: u64,
    pub step: usize,
    pub num_workers: usize,
    pub batch_size: usize,
    pub phase_time: f64,
    pub train_update_time: f64,
    pub wall_time: f64,
    pub gpu_busy_time: f64,
    pub gpu_idle_time: f64,
    pub gpu_idle_ratio: f64,
    pub launched: usize,
    pub valid_generated: usize,
    pub filtered: usize,
    pub aborted: usize,
    pub zero_gradient_in_batch: usize,
    pub sample_waste_ratio: f64,
    pub sample_waste_ratio_of_generated: f64,
}

impl From<&StepMetrics> for RlrStepMetrics {
    fn from(m: &StepMetrics) -> Self {
        Self {
            mode: m.mode.into(),
            seed: m.seed,
            step: m.step,
            num_workers: m.num_workers,
            batch_size: m.batch_size,
            phase_time: m.phase_time,
            train_update_time: m.train_update_time,
            wall_time: m.wall_time,
            gpu_busy_time: m.gpu_busy_time,
            gpu_idle_time: m.gpu_idle_time,
            gpu_idle_ratio: m.gpu_idle_ratio,
            launched: m.launched,
            valid_generated: m.valid_generated,
            filtered: m.filtered,
            aborted: m.aborted,
            zero_gradient_in_batch: m.zero_gradient_in_batch,
            sample_waste_ratio: m.sample_waste_ratio,
            sample_waste_ratio_of_generated: m.sample_waste_ratio_of_generated,
        }
    }
}

/// Tests clustered into difficulty levels, indexed in creation order.
pub struct RlrGrouping {
    grouping: DifficultyGrouping,
    compiled: CompiledGrouping,
    test_ids: Vec<String>,
}

pub struct RlrSimulator {
    sim: Simulation<SyntheticWorkload>,
}

struct Failure(RlrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::MoreLevelsThanTests { .. }
            | Error::EmptyLevel(_)
            | Error::UnknownTest(_)
            | Error::MissingGrouping(_) => RlrStatus::Grouping,
            Error::DegenerateGroup(_) => RlrStatus::DegenerateGroup,
            Error::ShapeMismatch(_) | Error::BatchNotDivisible { .. } => RlrStatus::ShapeMismatch,
            Error::NumericalBlowup => RlrStatus::Numerical,
            Error::DatasetExhausted | Error::InsufficientValid { .. } => RlrStatus::DatasetExhausted,
            Error::Unreachable { .. } => RlrStatus::Unreachable,
            Error::InvalidConfig(_) | Error::Toml(_) => RlrStatus::InvalidConfig,
            Error::InvalidArgument(_) => RlrStatus::InvalidArgument,
            Error::Io(_) => RlrStatus::Io,
            _ => RlrStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RlrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RlrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            RlrStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(RlrStatus::NullPointer, format!("{what} is null"))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RlrStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Message of the most recent failure on the calling thread, or null.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn rlr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn rlr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes 1 to `out` when `answer` matches `gold` after normalization.
#[no_mangle]
pub unsafe extern "C" fn rlr_math_verify(answer: *const c_char, gold: *const c_char, out: *mut i32) -> RlrStatus {
    guard(|| {
        let answer = string(answer, "answer")?;
        let gold = string(gold, "gold")?;
        *out_ref(out, "out")? = i32::from(math_verify(answer, gold));
        Ok(())
    })
}

/// Group-relative advantages of `n` rewards, written to `out[0..n]`.
#[no_mangle]
pub unsafe extern "C" fn rlr_compute_advantages(
    rewards: *const f64,
    n: usize,
    std_guard: f64,
    out: *mut f64,
) -> RlrStatus {
    guard(|| {
        let rewards = input(rewards, n, "rewards")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let adv = compute_advantages(rewards, std_guard)?;
        slice::from_raw_parts_mut(out, n).copy_from_slice(&adv);
        Ok(())
    })
}

/// Token-level clipped surrogate. `ratios` holds the responses' per-token
/// probability ratios back to back, `lengths[i]` tokens for response `i`.
#[no_mangle]
pub unsafe extern "C" fn rlr_grpo_objective(
    ratios: *const f64,
    lengths: *const usize,
    advantages: *const f64,
    n_responses: usize,
    eps_low: f64,
    eps_high: f64,
    out: *mut RlrObjective,
) -> RlrStatus {
    guard(|| {
        let lengths = input(lengths, n_responses, "lengths")?;
        let advantages = input(advantages, n_responses, "advantages")?;
        let total = lengths.iter().try_fold(0usize, |a, &l| a.checked_add(l));
        let total = total.ok_or_else(|| Failure(RlrStatus::ShapeMismatch, "lengths overflow".into()))?;
        let flat = input(ratios, total, "ratios")?;
        let mut rows = Vec::with_capacity(n_responses);
        let mut at = 0;
        for &len in lengths {
            rows.push(flat[at..at + len].to_vec());
            at += len;
        }
        let clip = ClipRange::new(eps_low, eps_high)?;
        let v = grpo_objective(&rows, advantages, lengths, &clip)?;
        *out_ref(out, "out")? = RlrObjective {
            objective: v.objective,
            loss: v.loss,
            clip_fraction: v.clip_fraction,
            tokens: v.tokens,
        };
        Ok(())
    })
}

/// Clusters `n_tests` tests into `levels` difficulty levels from their
/// pass rates. `quantile` selects equal-count bins instead of equal-width
/// ones.
#[no_mangle]
pub unsafe extern "C" fn rlr_grouping_new(
    problem_id: *const c_char,
    test_ids: *const *const c_char,
    pass_rates: *const f64,
    n_tests: usize,
    levels: usize,
    quantile: bool,
    out: *mut *mut RlrGrouping,
) -> RlrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let problem_id = string(problem_id, "problem_id")?;
        let ids = input(test_ids, n_tests, "test_ids")?;
        let rates = input(pass_rates, n_tests, "pass_rates")?;
        let test_ids = ids
            .iter()
            .map(|&p| string(p, "test id").map(str::to_owned))
            .collect::<Result<Vec<_>, _>>()?;
        let mut map = PassRates::new();
        for (id, &r) in test_ids.iter().zip(rates) {
            if map.insert(id.clone(), r).is_some() {
                return Err(Failure(RlrStatus::InvalidArgument, format!("duplicate test id {id}")));
            }
        }
        let opts = LevelOptions {
            binning: if quantile { Binning::Quantile } else { Binning::EqualWidth },
            ..LevelOptions::default()
        };
        let grouping = assign_difficulty_levels_with(problem_id, &map, levels, opts)?;
        let compiled = CompiledGrouping::new(&grouping, &test_ids)?;
        *out = Box::into_raw(Box::new(RlrGrouping {
            grouping,
            compiled,
            test_ids,
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rlr_grouping_free(grouping: *mut RlrGrouping) {
    if !grouping.is_null() {
        drop(Box::from_raw(grouping));
    }
}

#[no_mangle]
pub unsafe extern "C" fn rlr_grouping_num_levels(grouping: *const RlrGrouping, out: *mut usize) -> RlrStatus {
    guard(|| {
        let g = grouping.as_ref().ok_or_else(|| null("grouping"))?;
        *out_ref(out, "out")? = g.grouping.num_levels();
        Ok(())
    })
}

/// Writes the 1-based level of each test, in creation order, to
/// `out[0..n_tests]`.
#[no_mangle]
pub unsafe extern "C" fn rlr_grouping_levels(
    grouping: *const RlrGrouping,
    out: *mut u32,
    n_tests: usize,
) -> RlrStatus {
    guard(|| {
        let g = grouping.as_ref().ok_or_else(|| null("grouping"))?;
        if n_tests != g.test_ids.len() {
            return Err(Failure(
                RlrStatus::ShapeMismatch,
                format!("{n_tests} slots for {} tests", g.test_ids.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let out = slice::from_raw_parts_mut(out, n_tests);
        for (slot, id) in out.iter_mut().zip(&g.test_ids) {
            let level = g.grouping.level_of(id).expect("grouping covers its tests");
            *slot = u32::try_from(level).unwrap_or(u32::MAX);
        }
        Ok(())
    })
}

unsafe fn grouping_reward(
    grouping: *const RlrGrouping,
    passed: *const bool,
    n_tests: usize,
    out: *mut f64,
    soft: bool,
) -> RlrStatus {
    guard(|| {
        let g = grouping.as_ref().ok_or_else(|| null("grouping"))?;
        let passed = input(passed, n_tests, "passed")?;
        let r = if soft {
            g.compiled.soft(passed)?
        } else {
            g.compiled.strict(passed)?
        };
        *out_ref(out, "out")? = r;
        Ok(())
    })
}

/// All-or-nothing credit per level. `passed` is indexed in creation order.
#[no_mangle]
pub unsafe extern "C" fn rlr_strict_reward(
    grouping: *const RlrGrouping,
    passed: *const bool,
    n_tests: usize,
    out: *mut f64,
) -> RlrStatus {
    grouping_reward(grouping, passed, n_tests, out, false)
}

/// Per-test credit within each level. `passed` is indexed in creation order.
#[no_mangle]
pub unsafe extern "C" fn rlr_soft_reward(
    grouping: *const RlrGrouping,
    passed: *const bool,
    n_tests: usize,
    out: *mut f64,
) -> RlrStatus {
    grouping_reward(grouping, passed, n_tests, out, true)
}

/// Creates a simulator from a TOML config; null or empty text uses the
/// defaults.
#[no_mangle]
pub unsafe extern "C" fn rlr_simulator_new(config_toml: *const c_char, out: *mut *mut RlrSimulator) -> RlrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg = if config_toml.is_null() {
            SimConfig::default()
        } else {
            match string(config_toml, "config_toml")? {
                s if s.trim().is_empty() => SimConfig::default(),
                s => SimConfig::from_toml_str(s)?,
            }
        };
        let sim = Simulation::new(cfg)?;
        *out = Box::into_raw(Box::new(RlrSimulator { sim }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rlr_simulator_free(sim: *mut RlrSimulator) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Simulates the next training step.
#[no_mangle]
pub unsafe extern "C" fn rlr_simulator_run_step(sim: *mut RlrSimulator, out: *mut RlrStepMetrics) -> RlrStatus {
    guard(|| {
        let s = sim.as_mut().ok_or_else(|| null("sim"))?;
        let out = out_ref(out, "out")?;
        let report = s.sim.run_step()?;
        *out = (&report.metrics).into();
        Ok(())
    })
}
