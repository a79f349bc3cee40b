use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::{ObservationModel, Scenario, StateSampler};
use crate::sde::{euler_update, DiffusionModel, EulerWorkspace, TimeGrid};

/// `N(mean, variance · I)`.
#[derive(Debug, Clone)]
pub struct IsotropicGaussian {
    mean: Vec<f64>,
    variance: f64,
}

impl IsotropicGaussian {
    pub fn new(mean: Vec<f64>, variance: f64) -> Result<Self> {
        if mean.is_empty() || !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "isotropic Gaussian needs dim >= 1 and positive variance, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn centered(dim: usize, variance: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], variance)
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

impl StateSampler for IsotropicGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let sd = self.variance.sqrt();
        self.mean
            .iter()
            .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Dirac {
    point: Vec<f64>,
}

impl Dirac {
    pub fn new(point: Vec<f64>) -> Self {
        Self { point }
    }
}

impl StateSampler for Dirac {
    fn dim(&self) -> usize {
        self.point.len()
    }

    fn sample(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.point.clone()
    }
}

/// Uniform draws with replacement from a fixed reservoir.
#[derive(Debug, Clone)]
pub struct EmpiricalSampler {
    dim: usize,
    atoms: Vec<Vec<f64>>,
}

impl EmpiricalSampler {
    pub fn new(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let dim = atoms
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidParameter("empty reservoir".into()))?;
        if atoms.iter().any(|a| a.len() != dim) {
            return Err(Error::InvalidParameter("reservoir atoms have mixed dimensions".into()));
        }
        Ok(Self { dim, atoms })
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }
}

impl StateSampler for EmpiricalSampler {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.atoms[rng.random_range(0..self.atoms.len())].clone()
    }
}

/// The marginal law of `Y` when `X ~ η_X` and `Y | X ~ g(X, ·)`, sampled by
/// composition.
pub struct ImpliedObservation {
    eta_x: Arc<dyn StateSampler>,
    observation: Arc<dyn ObservationModel>,
}

impl ImpliedObservation {
    pub fn new(eta_x: Arc<dyn StateSampler>, observation: Arc<dyn ObservationModel>) -> Result<Self> {
        if eta_x.dim() != observation.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "implied observation law",
                expected: observation.state_dim(),
                got: eta_x.dim(),
            });
        }
        Ok(Self { eta_x, observation })
    }
}

impl StateSampler for ImpliedObservation {
    fn dim(&self) -> usize {
        self.observation.obs_dim()
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let x = self.eta_x.sample(rng);
        self.observation.sample(&x, rng)
    }
}

/// Training laws `η_X` for initial states and `η_Y` for observations.
#[derive(Clone)]
pub struct TrainingDistributions {
    pub eta_x: Arc<dyn StateSampler>,
    pub eta_y: Arc<dyn StateSampler>,
}

/// Advance `x` over one inter-observation interval with fresh noise.
fn advance<R: Rng + ?Sized>(
    model: &dyn DiffusionModel,
    x: &mut [f64],
    grid: &TimeGrid,
    ws: &mut EulerWorkspace,
    noise: &mut [f64],
    zero: &[f64],
    rng: &mut R,
) -> Result<()> {
    let sd = grid.step().sqrt();
    for m in 0..grid.n_steps() {
        noise
            .iter_mut()
            .for_each(|v| *v = sd * rng.sample::<f64, _>(StandardNormal));
        euler_update(model, x, zero, grid.step(), noise, ws, m)?;
    }
    Ok(())
}

/// Empirical training distributions from one long trajectory started at
/// `x0`: the states at every observation time `kT` up to `duration`, and an
/// observation sampled at each of them.
pub fn empirical_training_dists<R: Rng>(
    model: &dyn DiffusionModel,
    observation: &dyn ObservationModel,
    x0: &[f64],
    duration: f64,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<TrainingDistributions> {
    let intervals = (duration / grid.horizon()).round();
    if intervals < 1.0 || (intervals * grid.horizon() - duration).abs() > 1e-9 * duration {
        return Err(Error::InvalidParameter(format!(
            "reservoir duration {duration} is not a positive multiple of T = {}",
            grid.horizon()
        )));
    }
    let d = model.dim();
    let mut ws = EulerWorkspace::new(d);
    let mut noise = vec![0.0; d];
    let zero = vec![0.0; d];
    let mut x = x0.to_vec();
    let mut states = Vec::with_capacity(intervals as usize);
    let mut observations = Vec::with_capacity(intervals as usize);
    for k in 0..intervals as usize {
        advance(model, &mut x, grid, &mut ws, &mut noise, &zero, rng)
            .map_err(|e| e.at_observation(k + 1))?;
        observations.push(observation.sample(&x, rng));
        states.push(x.clone());
    }
    Ok(TrainingDistributions {
        eta_x: Arc::new(EmpiricalSampler::new(states)?),
        eta_y: Arc::new(EmpiricalSampler::new(observations)?),
    })
}

/// A simulated latent path at the observation times and its observations.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub initial: Vec<f64>,
    pub latent: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
}

/// Simulate `n_obs` observations at times `T, 2T, ...` from the scenario's
/// initial law. The OU model uses its exact transition; other models use
/// Euler–Maruyama on `grid`.
pub fn simulate_observations<R: Rng>(
    scenario: &Scenario,
    n_obs: usize,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<SimulatedData> {
    let d = scenario.state_dim();
    let initial = scenario.initial.sample(rng);
    let mut x = initial.clone();
    let mut ws = EulerWorkspace::new(d);
    let mut noise = vec![0.0; d];
    let zero = vec![0.0; d];
    let mut latent = Vec::with_capacity(n_obs);
    let mut observations = Vec::with_capacity(n_obs);
    for k in 0..n_obs {
        match &scenario.ou {
            Some(ou) => x = ou.sample_transition(&x, grid.horizon(), rng),
            None => advance(scenario.diffusion.as_ref(), &mut x, grid, &mut ws, &mut noise, &zero, rng)
                .map_err(|e| e.at_observation(k + 1))?,
        }
        observations.push(scenario.observation.sample(&x, rng));
        latent.push(x.clone());
    }
    Ok(SimulatedData {
        initial,
        latent,
        observations,
    })
}
