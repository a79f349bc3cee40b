//! Experiment configuration (TOML, schema version 1).

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use cdt_core::filters::{GirfConfig, GirfSchedule, Resampling};
use cdt_core::models::{nb_obs, GaussianObservation, LogisticLamperti, ObservationModel, Scenario};
use cdt_core::neural::{AdamConfig, NetworkSpec, WidthPolicy};
use cdt_core::sde::TimeGrid;
use cdt_core::train::Scheme;
use serde::Deserialize;
use sha2::{Digest, Sha256};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_PARTICLES: usize = 1000;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Master seed; `--seed` overrides it.
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub filter: FilterSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Ou {
        dims: Vec<usize>,
        sigma_y: Vec<f64>,
    },
    Logistic {
        /// `(θ₁, θ₂, θ₃)`; no default on purpose.
        theta: [f64; 3],
        theta4: Vec<f64>,
    },
    Cell {
        sigma_y: Vec<f64>,
        #[serde(default = "default_reservoir")]
        reservoir_duration: f64,
    },
}

fn default_reservoir() -> f64 {
    2000.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub step: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            step: 0.02,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub width_a: usize,
    pub width_b: usize,
    pub leaky_slope: f64,
    /// Draws used to standardize network inputs; 0 disables scaling.
    pub scaling_samples: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            width_a: 10,
            width_b: 10,
            leaky_slope: cdt_core::neural::DEFAULT_LEAKY_SLOPE,
            scaling_samples: 10_000,
        }
    }
}

impl NetworkConfig {
    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec {
            width: WidthPolicy {
                a: self.width_a,
                b: self.width_b,
            },
            alpha: self.leaky_slope,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: usize,
    pub j_obs: usize,
    pub j_mini: usize,
    pub learning_rate: f64,
    pub schemes: Vec<SchemeName>,
    /// Write an intermediate checkpoint every this many iterations; 0 never.
    pub checkpoint_every: usize,
    /// Export network and closed-form value/control grids (OU, d = 1).
    pub overlay: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            iterations: 2000,
            j_obs: 10,
            j_mini: 100,
            learning_rate: 0.01,
            schemes: vec![SchemeName::Iterative],
            checkpoint_every: 100,
            overlay: true,
        }
    }
}

impl TrainSection {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Static,
    Iterative,
}

impl SchemeName {
    pub fn scheme(self) -> Scheme {
        match self {
            SchemeName::Static => Scheme::Static,
            SchemeName::Iterative => Scheme::Iterative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterName {
    Bpf,
    StaticApf,
    IterativeApf,
    ExactApf,
    FaApf,
    FaApfDiscretized,
    GirfLinear,
    GirfQuadratic,
    GirfOptimal,
}

impl FilterName {
    pub const ALL: [FilterName; 9] = [
        FilterName::Bpf,
        FilterName::StaticApf,
        FilterName::IterativeApf,
        FilterName::ExactApf,
        FilterName::FaApf,
        FilterName::FaApfDiscretized,
        FilterName::GirfLinear,
        FilterName::GirfQuadratic,
        FilterName::GirfOptimal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterName::Bpf => "bpf",
            FilterName::StaticApf => "static-apf",
            FilterName::IterativeApf => "iterative-apf",
            FilterName::ExactApf => "exact-apf",
            FilterName::FaApf => "fa-apf",
            FilterName::FaApfDiscretized => "fa-apf-discretized",
            FilterName::GirfLinear => "girf-linear",
            FilterName::GirfQuadratic => "girf-quadratic",
            FilterName::GirfOptimal => "girf-optimal",
        }
    }

    /// The training scheme whose checkpoint drives this filter, if any.
    pub fn learned_scheme(self) -> Option<SchemeName> {
        match self {
            FilterName::StaticApf => Some(SchemeName::Static),
            FilterName::IterativeApf => Some(SchemeName::Iterative),
            _ => None,
        }
    }

    /// Filters that need the OU closed form.
    pub fn needs_oracle(self) -> bool {
        matches!(
            self,
            FilterName::ExactApf | FilterName::FaApf | FilterName::FaApfDiscretized | FilterName::GirfOptimal
        )
    }

    pub fn girf_schedule(self) -> Option<GirfSchedule> {
        match self {
            FilterName::GirfLinear => Some(GirfSchedule::Linear),
            FilterName::GirfQuadratic => Some(GirfSchedule::Quadratic),
            FilterName::GirfOptimal => Some(GirfSchedule::Optimal),
            _ => None,
        }
    }
}

impl std::str::FromStr for FilterName {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterName::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .with_context(|| format!("unknown filter {s:?}"))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub filters: Vec<FilterName>,
    /// Numbers of observations K.
    pub observations: Vec<usize>,
    /// Fixed particle count M (default 1000).
    pub particles: Option<usize>,
    /// Particles per observation; M = rate·K. Exclusive with `particles`.
    pub particles_per_observation: Option<usize>,
    pub repetitions: usize,
    pub resampling: Resampling,
    /// GIRF sub-intervals P; defaults to the number of Euler steps.
    pub girf_steps: Option<usize>,
    /// Observations are simulated with noise inflated by these factors.
    pub noise_multiples: Vec<f64>,
    /// Filter whose ELBO is subtracted in the summary's gap column.
    pub reference: Option<FilterName>,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            filters: Vec::new(),
            observations: vec![25],
            particles: None,
            particles_per_observation: None,
            repetitions: 100,
            resampling: Resampling::Multinomial,
            girf_steps: None,
            noise_multiples: vec![1.0],
            reference: None,
        }
    }
}

impl FilterSection {
    pub fn particles_for(&self, k: usize) -> usize {
        match (self.particles, self.particles_per_observation) {
            (_, Some(rate)) => rate * k.max(1),
            (Some(m), None) => m,
            (None, None) => DEFAULT_PARTICLES,
        }
    }

    pub fn girf_config(&self, grid: &TimeGrid, schedule: GirfSchedule) -> GirfConfig {
        match self.girf_steps {
            Some(p) => GirfConfig {
                intermediate_steps: p,
                schedule,
            },
            None => GirfConfig::on_grid(grid, schedule),
        }
    }
}

/// One point of the parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint {
    pub index: usize,
    pub dim: usize,
    pub sigma_y: Option<f64>,
    pub theta4: Option<f64>,
}

impl ParamPoint {
    pub fn label(&self, model: &str) -> String {
        match (self.sigma_y, self.theta4) {
            (Some(s), _) if model == "ou" => format!("ou_d{}_sy{s}", self.dim),
            (Some(s), _) => format!("{model}_sy{s}"),
            (_, Some(t)) => format!("{model}_th4_{t}"),
            _ => model.to_string(),
        }
    }
}

/// A parsed configuration together with its content hash.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Hex SHA-256 of the configuration file bytes.
    pub hash: String,
}

impl LoadedConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).context("invalid configuration")?;
        config.validate()?;
        Ok(Self {
            config,
            hash: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_str(&text).with_context(|| format!("in {}", path.display()))
    }
}

fn check_positive(name: &str, values: &[f64]) -> Result<()> {
    ensure!(!values.is_empty(), "{name} must list at least one value");
    for &v in values {
        ensure!(v > 0.0 && v.is_finite(), "{name} values must be positive, got {v}");
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.version == CONFIG_VERSION,
            "unsupported config version {} (expected {CONFIG_VERSION})",
            self.version
        );
        match &self.model {
            ModelConfig::Ou { dims, sigma_y } => {
                ensure!(!dims.is_empty() && dims.iter().all(|&d| d > 0), "model.dims must be positive");
                check_positive("model.sigma_y", sigma_y)?;
            }
            ModelConfig::Logistic { theta, theta4 } => {
                check_positive("model.theta", theta)?;
                check_positive("model.theta4", theta4)?;
            }
            ModelConfig::Cell {
                sigma_y,
                reservoir_duration,
            } => {
                check_positive("model.sigma_y", sigma_y)?;
                ensure!(*reservoir_duration > 0.0, "model.reservoir_duration must be positive");
            }
        }
        self.time_grid()?;
        let t = &self.train;
        ensure!(t.j_obs > 0 && t.j_mini > 0, "train.j_obs and train.j_mini must be positive");
        ensure!(
            t.learning_rate > 0.0 && t.learning_rate.is_finite(),
            "train.learning_rate must be positive"
        );
        ensure!(self.network.width_a > 0 || self.network.width_b > 0, "network width must be positive");
        let f = &self.filter;
        match (f.particles, f.particles_per_observation) {
            (Some(_), Some(_)) => bail!("set only one of filter.particles and filter.particles_per_observation"),
            (Some(0), _) | (_, Some(0)) => bail!("particle counts must be positive"),
            _ => {}
        }
        ensure!(f.repetitions > 0, "filter.repetitions must be positive");
        check_positive("filter.noise_multiples", &f.noise_multiples)?;
        if let Some(reference) = f.reference {
            ensure!(
                f.filters.contains(&reference),
                "reference filter {} is not in filter.filters",
                reference.name()
            );
        }
        let oracle_free = !matches!(self.model, ModelConfig::Ou { .. });
        if let Some(bad) = f.filters.iter().find(|x| x.needs_oracle() && oracle_free) {
            bail!("filter {} needs the OU closed form", bad.name());
        }
        if let ModelConfig::Logistic { .. } = self.model {
            ensure!(
                f.noise_multiples.iter().all(|&k| k >= 1.0),
                "logistic noise multiples must be at least 1"
            );
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.horizon, self.grid.step).context("invalid [grid]")
    }

    pub fn model_name(&self) -> &'static str {
        match self.model {
            ModelConfig::Ou { .. } => "ou",
            ModelConfig::Logistic { .. } => "logistic",
            ModelConfig::Cell { .. } => "cell",
        }
    }

    pub fn points(&self) -> Vec<ParamPoint> {
        let mut points = Vec::new();
        match &self.model {
            ModelConfig::Ou { dims, sigma_y } => {
                for &dim in dims {
                    for &s in sigma_y {
                        points.push((dim, Some(s), None));
                    }
                }
            }
            ModelConfig::Logistic { theta4, .. } => points.extend(theta4.iter().map(|&t| (1, None, Some(t)))),
            ModelConfig::Cell { sigma_y, .. } => points.extend(sigma_y.iter().map(|&s| (2, Some(s), None))),
        }
        points
            .into_iter()
            .enumerate()
            .map(|(index, (dim, sigma_y, theta4))| ParamPoint {
                index,
                dim,
                sigma_y,
                theta4,
            })
            .collect()
    }

    /// The filtering model at `point`.
    pub fn scenario(&self, point: &ParamPoint, master_seed: u64) -> Result<Scenario> {
        let grid = self.time_grid()?;
        let scenario = match &self.model {
            ModelConfig::Ou { .. } => Scenario::ou(point.dim, point.sigma_y.unwrap(), grid.horizon())?,
            ModelConfig::Logistic { theta, .. } => Scenario::logistic(*theta, point.theta4.unwrap())?,
            ModelConfig::Cell {
                reservoir_duration, ..
            } => Scenario::cell(point.sigma_y.unwrap(), &grid, *reservoir_duration, master_seed)?,
        };
        Ok(scenario)
    }

    /// Observation model used to simulate data with noise inflated by
    /// `multiple`. Gaussian noise scales its standard deviation; negative
    /// binomial counts get the dispersion whose standard deviation at the
    /// stationary mean population is `multiple` times the original.
    pub fn generating_observation(&self, point: &ParamPoint, multiple: f64) -> Result<Arc<dyn ObservationModel>> {
        Ok(match &self.model {
            ModelConfig::Ou { .. } | ModelConfig::Cell { .. } => Arc::new(GaussianObservation::new(
                point.dim,
                point.sigma_y.unwrap() * multiple,
            )?),
            ModelConfig::Logistic { theta, .. } => {
                let r = point.theta4.unwrap();
                let (shape, rate) = LogisticLamperti::new(theta[0], theta[1], theta[2])?.stationary_gamma();
                Arc::new(nb_obs(theta[2], inflated_dispersion(r, shape / rate, multiple)?)?)
            }
        })
    }
}

/// Dispersion `r'` with `m + m²/r' = k²(m + m²/r)`.
pub fn inflated_dispersion(r: f64, m: f64, k: f64) -> Result<f64> {
    if k == 1.0 {
        return Ok(r);
    }
    let denom = k * k * (m + m * m / r) - m;
    ensure!(denom > 0.0, "noise multiple {k} is not attainable by a negative binomial");
    Ok(m * m / denom)
}
