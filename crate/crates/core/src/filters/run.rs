use serde::Serialize;

use crate::error::{Error, Result};
use crate::filters::girf::{girf_assimilate, girf_initialize, GirfConfig};
use crate::filters::steps::{apf_step, bpf_step, fa_apf_step_ou, StepContext, StepDiagnostics};
use crate::filters::{Guide, ParticleEnsemble, Resampling};
use crate::oracle::KalmanMode;
use crate::models::Scenario;
use crate::rng::{stream, tag};
use crate::sde::{check_dim, TimeGrid};

#[derive(Clone, Copy)]
pub enum FilterKind<'a> {
    Bootstrap,
    /// Auxiliary filter moved by a guide (learned networks or the OU oracle).
    Auxiliary(&'a dyn Guide),
    /// Exact fully adapted filter for the OU diffusion (`Continuous`) or
    /// for its Euler chain (`Discretized`).
    FullyAdaptedOu(KalmanMode),
    Girf(&'a GirfConfig),
}

#[derive(Debug, Clone)]
pub struct FilterOptions {
    pub particles: usize,
    pub grid: TimeGrid,
    pub resampling: Resampling,
    pub seed: u64,
}

/// Diagnostics of one filter pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub particles: usize,
    pub log_evidence: f64,
    /// ESS at each observation time, before resampling.
    pub ess: Vec<f64>,
    pub log_increments: Vec<f64>,
}

impl RunRecord {
    /// Mean ESS over observation times; `M` when there are none.
    pub fn mean_ess(&self) -> f64 {
        if self.ess.is_empty() {
            self.particles as f64
        } else {
            self.ess.iter().sum::<f64>() / self.ess.len() as f64
        }
    }

    pub fn mean_ess_fraction(&self) -> f64 {
        self.mean_ess() / self.particles as f64
    }
}

fn validate(kind: &FilterKind<'_>, scenario: &Scenario, observations: &[Vec<f64>], options: &FilterOptions) -> Result<()> {
    if options.particles == 0 {
        return Err(Error::InvalidParameter("at least one particle is required".into()));
    }
    for (k, y) in observations.iter().enumerate() {
        check_dim("observation", scenario.obs_dim(), y.len())
            .and_then(|_| scenario.observation.validate(y))
            .map_err(|e| e.at_observation(k + 1))?;
    }
    match kind {
        FilterKind::Auxiliary(guide) => check_dim("guide dimension", scenario.state_dim(), guide.dim()),
        FilterKind::FullyAdaptedOu(mode) => {
            let oracle = scenario.oracle()?;
            oracle.transition(*mode)?;
            if (oracle.horizon() - options.grid.horizon()).abs() > 1e-12 {
                return Err(Error::InvalidParameter("oracle and grid horizons differ".into()));
            }
            Ok(())
        }
        FilterKind::Girf(config) => config.validate(&options.grid),
        FilterKind::Bootstrap => Ok(()),
    }
}

/// Filter `observations` (at times `T, 2T, …`) from the scenario's initial
/// law and return the diagnostics and `log p̂(y₁, …, y_K)`.
pub fn run_filter(
    kind: FilterKind<'_>,
    scenario: &Scenario,
    observations: &[Vec<f64>],
    options: &FilterOptions,
) -> Result<RunRecord> {
    validate(&kind, scenario, observations, options)?;
    let m = options.particles;
    let states = (0..m)
        .map(|j| scenario.initial.sample(&mut stream(options.seed, &[tag::INIT, j as u64])))
        .collect();
    let mut ensemble = ParticleEnsemble::new(states)?;
    let context = |index: u64| StepContext {
        scenario,
        grid: &options.grid,
        resampling: options.resampling,
        seed: options.seed,
        index,
    };

    let mut record = RunRecord {
        particles: m,
        log_evidence: 0.0,
        ess: Vec::with_capacity(observations.len()),
        log_increments: Vec::with_capacity(observations.len()),
    };
    let mut push = |d: StepDiagnostics| {
        record.ess.push(d.ess);
        record.log_increments.push(d.log_increment);
    };

    match kind {
        FilterKind::Girf(config) => {
            let mut state = girf_initialize(ensemble, &context(0), observations.first().map(Vec::as_slice), config)?;
            for (k, y) in observations.iter().enumerate() {
                let next = observations.get(k + 1).map(Vec::as_slice);
                let d = girf_assimilate(&mut state, &context(k as u64 + 1), y, next, config)
                    .map_err(|e| e.at_observation(k + 1))?;
                push(d);
            }
            ensemble = state.ensemble;
        }
        _ => {
            let oracle = match kind {
                FilterKind::FullyAdaptedOu(_) => Some(scenario.oracle()?),
                _ => None,
            };
            for (k, y) in observations.iter().enumerate() {
                let ctx = context(k as u64 + 1);
                let d = match kind {
                    FilterKind::Bootstrap => bpf_step(&mut ensemble, &ctx, y),
                    FilterKind::Auxiliary(guide) => apf_step(&mut ensemble, &ctx, y, guide),
                    FilterKind::FullyAdaptedOu(mode) => {
                        fa_apf_step_ou(&mut ensemble, &ctx, y, oracle.expect("checked"), mode)
                    }
                    FilterKind::Girf(_) => unreachable!(),
                }
                .map_err(|e| e.at_observation(k + 1))?;
                push(d);
            }
        }
    }
    record.log_evidence = ensemble.log_evidence();
    Ok(record)
}
