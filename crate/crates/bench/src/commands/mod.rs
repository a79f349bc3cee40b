mod filter;
mod simulate;
mod train;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cdt_core::models::{simulate_observations, Scenario, SimulatedData};
use cdt_core::rng::{derive_seed, stream, tag};

use crate::config::{ExperimentConfig, LoadedConfig, ParamPoint};
use crate::obsfile::ObservationFile;

pub use filter::{cmd_filter, summarize, FilterOutcome, ResultRow, SummaryRow, RESULTS_HEADER, SUMMARY_HEADER};
pub use simulate::cmd_simulate;
pub use train::{checkpoint_name, cmd_train, TrainOutcome};

/// Command-line overrides shared by all verbs.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    /// Checkpoint file, or directory holding `<label>_<scheme>.ckpt.json`.
    /// Defaults to the output directory.
    pub checkpoint: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub quiet: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            ..Self::default()
        }
    }

    pub fn master_seed(&self, config: &LoadedConfig) -> u64 {
        self.seed.unwrap_or(config.config.seed)
    }

    fn prepare_out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        Ok(&self.out_dir)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

/// Seed of the data set simulated for `(point, K, noise multiple)`.
pub fn data_seed(master: u64, point: &ParamPoint, k: usize, multiple: f64) -> u64 {
    derive_seed(master, &[tag::SIMULATE, point.index as u64, k as u64, multiple.to_bits()])
}

/// Simulate `k` observations of `point` with noise inflated by `multiple`.
pub fn simulate_dataset(
    config: &ExperimentConfig,
    point: &ParamPoint,
    scenario: &Scenario,
    k: usize,
    multiple: f64,
    master: u64,
) -> Result<(ObservationFile, SimulatedData)> {
    let generating = scenario.with_observation(config.generating_observation(point, multiple)?)?;
    let seed = data_seed(master, point, k, multiple);
    let data = simulate_observations(&generating, k, &config.time_grid()?, &mut stream(seed, &[]))
        .with_context(|| format!("simulating {} (seed {seed})", point.label(&scenario.name)))?;
    let file = ObservationFile {
        model: scenario.name.clone(),
        state_dim: scenario.state_dim(),
        obs_dim: scenario.obs_dim(),
        params: generating.observation.describe(),
        noise_multiple: multiple,
        seed,
        observations: data.observations.clone(),
    };
    Ok((file, data))
}
