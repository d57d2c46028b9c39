//! Experiment plumbing: synthetic datasets, offline prefiltering, toy
//! training runs and report files.

pub mod datagen;
pub mod prefilter;
pub mod report;
pub mod toy;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use datagen::{generate_dataset, PriorDistribution, SyntheticTaskSpec};
pub use prefilter::{prefilter_dataset, read_counts, PrefilterConfig, PrefilterOutcome, PrefilterRecord};
pub use report::{
    load_table_rows, read_ablation_csv, read_step_csv, render_ablation_table, render_validation_table,
    write_ablation_csv, write_iteration_csv, write_step_csv,
};
pub use toy::{initial_policy, IterationRecord, RolloutRecord, ToyOptions, ToySource, ToyTrainer};

use crate::engine::{SimConfig, CONFIG_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::grpo::GrpoConfig;
use crate::model::{read_dataset, Domain, ProblemSpec};
use crate::reward::{PassRates, RewardConfig, RewardScheme};

/// Where training problems come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// JSONL dataset; when absent a synthetic one is generated.
    pub file: Option<PathBuf>,
    pub synthetic: SyntheticTaskSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            file: None,
            synthetic: SyntheticTaskSpec::default(),
        }
    }
}

/// Toy-training experiment, serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub name: String,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub sim: SimConfig,
    pub grpo: GrpoConfig,
    pub reward: RewardConfig,
    pub dataset: DatasetConfig,
    pub toy: ToyOptions,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        // The toy loss averages over every token of a mini-batch, so its
        // gradients are small; a large step keeps 50 iterations meaningful.
        let grpo = GrpoConfig {
            learning_rate: 40.0,
            ..GrpoConfig::default()
        };
        let sim = SimConfig {
            batch_size: grpo.train_batch_size,
            group_size: 8,
            num_workers: 16,
            num_reward_servers: 4,
            ..SimConfig::default()
        };
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            name: "toy".into(),
            iterations: 50,
            seeds: vec![0, 1, 2],
            sim,
            grpo,
            reward: RewardConfig::default(),
            dataset: DatasetConfig::default(),
            toy: ToyOptions::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut spec = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        // Dataset paths are relative to the experiment file.
        if let (Some(file), Some(dir)) = (&spec.dataset.file, path.parent()) {
            if file.is_relative() {
                spec.dataset.file = Some(dir.join(file));
            }
        }
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.iterations == 0 || self.seeds.is_empty() {
            return Err(Error::InvalidConfig("need at least one iteration and one seed".into()));
        }
        if self.sim.batch_size != self.grpo.train_batch_size {
            return Err(Error::InvalidConfig(format!(
                "sim.batch_size {} differs from grpo.train_batch_size {}",
                self.sim.batch_size, self.grpo.train_batch_size
            )));
        }
        self.sim.validate()?;
        self.grpo.validate()?;
        self.dataset.synthetic.validate()
    }

    /// Loads or generates the problems. File datasets without a stored
    /// grouping are grouped from their tests' pass probabilities when the
    /// reward scheme needs levels.
    pub fn load_problems(&self, seed: u64) -> Result<Vec<ProblemSpec>> {
        let mut problems = match &self.dataset.file {
            Some(path) => read_dataset(path)?,
            None => generate_dataset(&self.dataset.synthetic, seed)?,
        };
        if self.reward.scheme != RewardScheme::BinaryAllTests {
            for p in problems.iter_mut().filter(|p| p.domain == Domain::Code && p.grouping.is_none()) {
                let mut rates = PassRates::new();
                for t in &p.tests {
                    let rate = t
                        .pass_probability
                        .ok_or_else(|| Error::MissingGrouping(p.id.clone()))?;
                    rates.insert(t.id.clone(), rate);
                }
                let grouping = self.reward.group_tests(&p.id, &rates)?;
                p.set_grouping(grouping)?;
            }
        }
        Ok(problems)
    }

    pub fn trainer(&self, seed: u64) -> Result<ToyTrainer> {
        self.validate()?;
        let problems = self.load_problems(seed)?;
        ToyTrainer::new(
            problems,
            self.dataset.synthetic.vocab,
            self.dataset.synthetic.seq_len,
            self.reward.scheme,
            self.sim.with_seed(seed),
            self.grpo.clone(),
            self.toy.clone(),
            seed,
        )
    }

    /// Runs every iteration for one seed.
    pub fn run(&self, seed: u64) -> Result<Vec<IterationRecord>> {
        let mut trainer = self.trainer(seed)?;
        (0..self.iterations).map(|_| trainer.step()).collect()
    }
}

/// Means of consecutive blocks of `block` values; a trailing partial block
/// is dropped.
pub fn block_means(values: &[f64], block: usize) -> Vec<f64> {
    values
        .chunks_exact(block.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_toml_round_trip() {
        let spec = ExperimentSpec::default();
        let text = spec.to_toml_string().unwrap();
        assert_eq!(ExperimentSpec::from_toml_str(&text).unwrap(), spec);
    }

    #[test]
    fn mismatched_batch_rejected() {
        let mut spec = ExperimentSpec::default();
        spec.sim.batch_size = 7;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn block_means_drop_partial() {
        assert_eq!(block_means(&[1.0, 3.0, 5.0, 7.0, 9.0], 2), vec![2.0, 6.0]);
        assert_eq!(variance(&[1.0, 3.0]), 1.0);
    }
}
