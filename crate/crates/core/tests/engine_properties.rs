use std::cmp::Reverse;
use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;

use rlrollout::engine::{
    drive, estimate_launch_demand, run_live_step, run_validation, Action, DemandConfig,
    LatencyModel, LiveOptions, Mode, PassEstimate, Scheduler, ScriptedSource, SimConfig,
    Simulation, TaskContent, TaskSource, TaskState, WorkloadConfig,
};
use rlrollout::model::ResponseGroup;
use rlrollout::sampler::DrawSource;

fn small(mode: Mode, seed: u64) -> SimConfig {
    SimConfig {
        mode,
        seed,
        num_workers: 6,
        num_reward_servers: 2,
        batch_size: 6,
        group_size: 8,
        workload: WorkloadConfig {
            num_problems: 128,
            ..WorkloadConfig::default()
        },
        ..SimConfig::default()
    }
}

fn content(i: usize, rewards: Vec<f64>, rollout: u32, reward: u32) -> TaskContent {
    let id = format!("p{i}");
    TaskContent {
        group: ResponseGroup::from_rewards(id.clone(), &rewards),
        problem_id: id,
        source: DrawSource::Active,
        rollout_time: f64::from(rollout),
        reward_time: f64::from(reward),
    }
}

/// Event loop that breaks ties among simultaneous events by the highest
/// launch index first, the opposite of the library driver.
fn drive_reversed(scheduler: &mut Scheduler, source: &mut ScriptedSource) -> Vec<u64> {
    // Keyed by (time, kind, reversed launch index); kind 0 is a reward.
    let mut queue: BTreeMap<(u64, u8, Reverse<u64>), Option<usize>> = BTreeMap::new();
    let mut contents: Vec<TaskContent> = Vec::new();
    let mut aborted = HashSet::new();
    let mut now = 0u64;
    let mut pending = scheduler.start(0.0).unwrap();
    loop {
        for action in pending.drain(..) {
            match action {
                Action::Launch { launch_index } => {
                    let c = source.launch(0, launch_index).unwrap();
                    scheduler.set_problem(launch_index, c.problem_id.clone()).unwrap();
                    contents.push(c);
                }
                Action::StartRollout { launch_index, .. } => {
                    let t = now + contents[launch_index as usize].rollout_time as u64;
                    queue.insert((t, 1, Reverse(launch_index)), None);
                }
                Action::StartReward { launch_index, server } => {
                    let t = now + contents[launch_index as usize].reward_time as u64;
                    queue.insert((t, 0, Reverse(launch_index)), Some(server));
                }
                Action::Abort { launch_index } => {
                    aborted.insert(launch_index);
                }
                Action::Finalize { batch } => return batch,
            }
        }
        let ((t, _, Reverse(i)), server) = loop {
            let (k, v) = queue.pop_first().expect("scheduler stalled");
            if !aborted.contains(&k.2 .0) {
                break (k, v);
            }
        };
        now = t;
        pending = match server {
            None => scheduler.on_rollout_complete(i, t as f64).unwrap(),
            Some(s) => {
                let class = source.complete(&contents[i as usize]).unwrap();
                scheduler.on_reward_complete(i, s, class, t as f64).unwrap()
            }
        };
    }
}

fn scripted() -> impl Strategy<Value = Vec<TaskContent>> {
    prop::collection::vec((prop::collection::vec(prop::bool::ANY, 4), 1u32..4, 0u32..3), 400).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (bits, rollout, reward))| {
                content(i, bits.into_iter().map(f64::from).collect(), rollout, reward)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_ignores_tie_breaking(
        contents in scripted(),
        mode_ix in 0usize..Mode::ALL.len(),
        workers in 1usize..6,
        batch in 1usize..5,
    ) {
        let mode = Mode::ALL[mode_ix];
        let cfg = SimConfig { num_workers: workers, num_reward_servers: 2, batch_size: batch, ..SimConfig::default() };
        let valid = contents.iter().filter(|c| {
            let r = c.group.rewards().unwrap();
            r.iter().any(|x| *x == 1.0) && r.iter().any(|x| *x != 1.0)
        }).count();
        prop_assume!(valid >= 3 * batch);
        let make = || Scheduler::new(mode.policy(&cfg), batch, workers, cfg.demand, cfg.demand.prior).unwrap();

        let mut a = make();
        drive(&mut a, &mut ScriptedSource::new(contents.clone()), 0, 0.0, 1e9).unwrap();
        let forward = a.finalization().unwrap().batch.clone();

        let mut b = make();
        let reversed = drive_reversed(&mut b, &mut ScriptedSource::new(contents));
        prop_assert_eq!(forward, reversed);
    }

    #[test]
    fn accounting_sums_for_every_mode(seed in 0u64..1000, mode_ix in 0usize..Mode::ALL.len()) {
        let cfg = small(Mode::ALL[mode_ix], seed);
        for r in Simulation::new(cfg).unwrap().run(2).unwrap() {
            let m = r.metrics;
            let capacity = m.num_workers as f64 * m.phase_time;
            prop_assert!((m.gpu_busy_time + m.gpu_idle_time - capacity).abs() <= 1e-9 * capacity);
            prop_assert!((0.0..=1.0).contains(&m.gpu_idle_ratio));
            prop_assert!(m.sample_waste_ratio >= 0.0);
            prop_assert_eq!(m.launched, r.tasks.len());
            prop_assert!(r.tasks.iter().all(|t| t.state.is_terminal()));
        }
    }
}

#[test]
fn demand_examples() {
    let half = PassEstimate { p0: 0.25, p1: 0.25 };
    assert_eq!(estimate_launch_demand(4, 3, &half, 4, 0.05, 10), 0);
    assert_eq!(estimate_launch_demand(2, 2, &half, 4, 0.05, 10), 2);
    let hopeless = PassEstimate { p0: 0.6, p1: 0.4 };
    let n = estimate_launch_demand(0, 0, &hopeless, 4, 0.05, 7);
    assert_eq!(n, 7);
}

#[test]
fn same_seed_same_metrics() {
    let cfg = small(Mode::Seamless, 42);
    let a: Vec<_> = Simulation::new(cfg.clone()).unwrap().run(3).unwrap().into_iter().map(|r| r.metrics).collect();
    let b: Vec<_> = Simulation::new(cfg).unwrap().run(3).unwrap().into_iter().map(|r| r.metrics).collect();
    assert_eq!(a, b);
}

#[test]
fn static_mode_wastes_nothing_but_keeps_dead_groups() {
    let mut dead = 0;
    for r in Simulation::new(small(Mode::Static, 1)).unwrap().run(10).unwrap() {
        assert_eq!(r.metrics.sample_waste_ratio, 0.0);
        assert_eq!(r.metrics.launched, 6);
        let last_rollout = r.tasks.iter().filter_map(|t| t.rollout_end).fold(0.0, f64::max);
        let first_reward = r.tasks.iter().filter_map(|t| t.end).fold(f64::INFINITY, f64::min);
        assert!(first_reward >= last_rollout);
        dead += r.metrics.zero_gradient_in_batch;
    }
    assert!(dead > 0);
}

#[test]
fn naive_mode_waits_for_the_round() {
    let r = Simulation::new(small(Mode::NaiveDynamic, 3)).unwrap().run_step().unwrap();
    // Every reward in a round finishes after every rollout of that round.
    let rollouts_done = r.tasks.iter().take(6).filter_map(|t| t.rollout_end).fold(0.0, f64::max);
    assert!(r.tasks.iter().take(6).all(|t| t.end.unwrap() >= rollouts_done));
    assert!(r.metrics.sample_waste_ratio >= 0.0);
}

#[test]
fn async_reward_starts_at_rollout_end() {
    let mut cfg = small(Mode::SeamlessMinusEarlyTerm, 4);
    cfg.num_reward_servers = 64;
    let r = Simulation::new(cfg).unwrap().run_step().unwrap();
    let latency = LatencyModel::default();
    for t in r.tasks.iter().filter(|t| t.state.is_completed()) {
        let gap = t.end.unwrap() - t.rollout_end.unwrap();
        assert!((gap - latency.math).abs() < 1e-9 || gap > 1.0, "{gap}");
    }
}

#[test]
fn zero_latency_validation_has_nothing_to_overlap() {
    let mut cfg = SimConfig::default();
    cfg.workload.reward_latency = LatencyModel {
        math: 0.0,
        code_median: 0.0,
        code_sigma: 0.5,
    };
    let report = run_validation(&cfg, None).unwrap();
    assert!((report.speedup - 1.0).abs() < 1e-9, "{}", report.speedup);
    let report = run_validation(&SimConfig::default(), None).unwrap();
    assert!(report.speedup > 1.0);
}

#[test]
fn unreachable_batch_errors() {
    let mut cfg = small(Mode::Seamless, 0);
    cfg.workload.pass_model.mean = 0.0;
    cfg.time_budget = 1e5;
    let err = Simulation::new(cfg).unwrap().run_step().unwrap_err();
    assert!(err.to_string().contains("unreachable"), "{err}");
}

#[test]
fn live_step_fills_a_clean_batch() {
    let cfg = small(Mode::Seamless, 9);
    let mut source = rlrollout::engine::SyntheticWorkload::new(
        cfg.workload.clone(),
        cfg.group_size,
        cfg.sampler.clone(),
        cfg.seed,
    )
    .unwrap();
    let opts = LiveOptions {
        time_scale: 2e-5,
        ..LiveOptions::default()
    };
    let report = run_live_step(&cfg, &mut source, DemandConfig::default().prior, 0, opts).unwrap();
    assert_eq!(report.batch.len(), cfg.batch_size);
    assert!(report.batch.iter().all(|b| b.pass_rate > 0.0 && b.pass_rate < 1.0));
    let aborted = report.tasks.iter().filter(|t| t.state == TaskState::Aborted).count();
    assert_eq!(aborted, report.metrics.aborted);
}
