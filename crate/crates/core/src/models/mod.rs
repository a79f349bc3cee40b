//! Latent diffusions, observation models and the sampling distributions
//! used for training and filter initialisation.

mod cell;
mod logistic;
mod observation;
mod ou;
mod samplers;

use std::sync::Arc;

use rand::RngCore;

pub use cell::{cell_model, CellDifferentiation, CELL_INITIAL_STATE};
pub use logistic::{logistic_model, GammaLamperti, LogisticLamperti};
pub use observation::{nb_obs, ou_obs, GaussianObservation, NegativeBinomialObservation};
pub use ou::{ou_model, OrnsteinUhlenbeck};
pub use samplers::{
    empirical_training_dists, simulate_observations, Dirac, EmpiricalSampler, ImpliedObservation, IsotropicGaussian,
    SimulatedData, TrainingDistributions,
};

use crate::error::{Error, Result};
use crate::oracle::OuClosedForm;
use crate::sde::{DiffusionModel, TimeGrid};

/// Measurement density `g(x, y)` of an observation given the latent state.
///
/// Observations are carried as `f64` vectors; count-valued models store
/// non-negative integers.
pub trait ObservationModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;

    /// `log g(x, y)`. Assumes `y` passed [`ObservationModel::validate`].
    fn log_likelihood(&self, x: &[f64], y: &[f64]) -> f64;

    /// `∇ₓ log g(x, y)`.
    fn grad_log_likelihood(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    fn sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;

    /// Reject observations outside the model's observation space.
    fn validate(&self, y: &[f64]) -> Result<()>;

    /// Short human-readable parameter summary, e.g. `sigma_y=0.5`.
    fn describe(&self) -> String;
}

pub trait StateSampler: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

/// Everything needed to train and filter one model configuration.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub diffusion: Arc<dyn DiffusionModel>,
    pub observation: Arc<dyn ObservationModel>,
    /// Law of the state at time zero.
    pub initial: Arc<dyn StateSampler>,
    pub training: TrainingDistributions,
    /// Closed forms, available for the Ornstein–Uhlenbeck model only.
    pub ou: Option<OuClosedForm>,
}

impl Scenario {
    /// d-dimensional OU with Gaussian observations, started in stationarity.
    pub fn ou(dim: usize, sigma_y: f64, horizon: f64) -> Result<Self> {
        let (diffusion, eta_x) = ou_model(dim)?;
        let (observation, eta_y) = ou_obs(dim, sigma_y)?;
        let eta_x = Arc::new(eta_x);
        Ok(Self {
            name: "ou".into(),
            diffusion: Arc::new(diffusion),
            observation: Arc::new(observation),
            initial: eta_x.clone(),
            training: TrainingDistributions {
                eta_x,
                eta_y: Arc::new(eta_y),
            },
            ou: Some(OuClosedForm::new(dim, sigma_y, horizon)?),
        })
    }

    /// Logistic diffusion in Lamperti coordinates with negative binomial
    /// counts, started in stationarity.
    pub fn logistic(theta: [f64; 3], theta4: f64) -> Result<Self> {
        let (diffusion, eta_x) = logistic_model(theta[0], theta[1], theta[2])?;
        let observation: Arc<dyn ObservationModel> = Arc::new(nb_obs(theta[2], theta4)?);
        let eta_x: Arc<dyn StateSampler> = Arc::new(eta_x);
        let eta_y = Arc::new(ImpliedObservation::new(eta_x.clone(), observation.clone())?);
        Ok(Self {
            name: "logistic".into(),
            diffusion: Arc::new(diffusion),
            observation,
            initial: eta_x.clone(),
            training: TrainingDistributions { eta_x, eta_y },
            ou: None,
        })
    }

    /// Two-gene cell model from the undifferentiated state, with training
    /// distributions taken from one long simulated trajectory.
    pub fn cell(sigma_y: f64, grid: &TimeGrid, reservoir_duration: f64, seed: u64) -> Result<Self> {
        let (diffusion, x0) = cell_model();
        let (observation, _) = ou_obs(2, sigma_y)?;
        let mut rng = crate::rng::stream(seed, &[crate::rng::tag::RESERVOIR]);
        let training = empirical_training_dists(&diffusion, &observation, &x0, reservoir_duration, grid, &mut rng)?;
        Ok(Self {
            name: "cell".into(),
            diffusion: Arc::new(diffusion),
            observation: Arc::new(observation),
            initial: Arc::new(Dirac::new(x0.to_vec())),
            training,
            ou: None,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.diffusion.dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.obs_dim()
    }

    /// The same scenario with a different observation model (used to
    /// simulate misspecified data).
    pub fn with_observation(&self, observation: Arc<dyn ObservationModel>) -> Result<Self> {
        if observation.state_dim() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "replacement observation model",
                expected: self.state_dim(),
                got: observation.state_dim(),
            });
        }
        Ok(Self {
            observation,
            ..self.clone()
        })
    }

    pub fn oracle(&self) -> Result<&OuClosedForm> {
        self.ou
            .as_ref()
            .ok_or_else(|| Error::OracleUnavailable(format!("no closed form for the {} model", self.name)))
    }
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim())
            .field("observation", &self.observation.describe())
            .finish()
    }
}
