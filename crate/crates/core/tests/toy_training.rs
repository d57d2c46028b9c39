use rlrollout::harness::{ExperimentSpec, PriorDistribution};
use rlrollout::model::write_dataset;
use rlrollout::reward::RewardScheme;
use rlrollout::Error;

fn small() -> ExperimentSpec {
    let mut spec = ExperimentSpec::default();
    spec.dataset.synthetic.math_problems = 48;
    spec.dataset.synthetic.code_problems = 48;
    spec.iterations = 4;
    spec
}

#[test]
fn certain_problems_all_land_in_the_pool() {
    let mut spec = small();
    spec.dataset.synthetic.prior = PriorDistribution::Fixed { value: 1.0 };
    spec.dataset.synthetic.hard_fraction = 0.0;
    let mut trainer = spec.trainer(0).unwrap();
    // No group can be mixed, so the first step drains the active set.
    assert!(matches!(trainer.step(), Err(Error::DatasetExhausted)));
    let sampler = trainer.source().sampler();
    assert_eq!(sampler.pool().len(), 96);
    assert!(sampler.active().is_empty());
}

#[test]
fn runs_are_reproducible() {
    let spec = ExperimentSpec {
        reward: rlrollout::reward::RewardConfig::with_scheme(RewardScheme::Strict),
        ..small()
    };
    assert_eq!(spec.run(5).unwrap(), spec.run(5).unwrap());
}

#[test]
fn batches_hold_only_mixed_groups() {
    let spec = small();
    for r in spec.run(2).unwrap() {
        assert_eq!(r.zero_gradient_in_batch, 0);
        assert!(r.batch_mean_reward > 0.0 && r.batch_mean_reward < 1.0);
        assert!((0.0..=1.0).contains(&r.clip_fraction));
    }
}

#[test]
fn dataset_file_is_grouped_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = small();
    let mut problems = rlrollout::harness::generate_dataset(&spec.dataset.synthetic, 1).unwrap();
    for p in &mut problems {
        p.grouping = None;
    }
    write_dataset(dir.path().join("d.jsonl"), &problems).unwrap();
    let toml = format!(
        "schema_version = 1\niterations = 2\nseeds = [1]\n[dataset]\nfile = \"d.jsonl\"\n[reward]\nscheme = \"soft\"\nbinning = \"quantile\"\n[sim]\nbatch_size = {}\ngroup_size = 8\n",
        spec.grpo.train_batch_size
    );
    std::fs::write(dir.path().join("exp.toml"), toml).unwrap();
    spec = ExperimentSpec::from_file(dir.path().join("exp.toml")).unwrap();
    let loaded = spec.load_problems(1).unwrap();
    assert!(loaded.iter().filter(|p| !p.tests.is_empty()).all(|p| p.grouping.is_some()));
    assert_eq!(spec.run(1).unwrap().len(), 2);
}

#[test]
fn live_mode_trains() {
    let mut spec = small();
    spec.iterations = 2;
    spec.toy.live = true;
    spec.toy.time_scale = 2e-6;
    let records = spec.run(3).unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| r.zero_gradient_in_batch == 0));
}
