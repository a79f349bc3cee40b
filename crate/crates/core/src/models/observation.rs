use std::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::models::{IsotropicGaussian, ObservationModel};

/// `y ~ N(x, σ_Y² I)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianObservation {
    dim: usize,
    sigma: f64,
    log_norm: f64,
}

impl GaussianObservation {
    pub fn new(dim: usize, sigma: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("observation dimension must be at least 1".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "observation standard deviation must be positive, got {sigma}"
            )));
        }
        Ok(Self {
            dim,
            sigma,
            log_norm: -0.5 * dim as f64 * (2.0 * PI * sigma * sigma).ln(),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl ObservationModel for GaussianObservation {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn obs_dim(&self) -> usize {
        self.dim
    }

    fn log_likelihood(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum();
        self.log_norm - sq / (2.0 * self.sigma * self.sigma)
    }

    fn grad_log_likelihood(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let prec = 1.0 / (self.sigma * self.sigma);
        for i in 0..self.dim {
            out[i] = (y[i] - x[i]) * prec;
        }
    }

    fn sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        x.iter()
            .map(|xi| xi + self.sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn validate(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "Gaussian observation",
                expected: self.dim,
                got: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidObservation(format!("non-finite value in {y:?}")));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!("sigma_y={}", self.sigma)
    }
}

/// Gaussian observation model and the implied observation law
/// `η_Y = N(0, (½ + σ_Y²) I)` under the stationary OU state.
pub fn ou_obs(dim: usize, sigma_y: f64) -> Result<(GaussianObservation, IsotropicGaussian)> {
    let obs = GaussianObservation::new(dim, sigma_y)?;
    let eta_y = IsotropicGaussian::centered(dim, 0.5 + sigma_y * sigma_y)?;
    Ok((obs, eta_y))
}

/// Negative binomial counts with dispersion `r` and mean `m = exp(θ₃ x)`,
/// i.e. success probability `r / (r + m)` and variance `m + m²/r`.
#[derive(Debug, Clone, Copy)]
pub struct NegativeBinomialObservation {
    theta3: f64,
    dispersion: f64,
    ln_gamma_r: f64,
}

impl NegativeBinomialObservation {
    pub fn new(theta3: f64, dispersion: f64) -> Result<Self> {
        if !(theta3 > 0.0 && theta3.is_finite()) || !(dispersion > 0.0 && dispersion.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "negative binomial needs positive theta3 and dispersion, got {theta3}, {dispersion}"
            )));
        }
        Ok(Self {
            theta3,
            dispersion,
            ln_gamma_r: ln_gamma(dispersion),
        })
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    pub fn mean(&self, x: f64) -> f64 {
        (self.theta3 * x).exp()
    }

    /// `log P(Y = count)` at mean `m`.
    pub fn log_pmf(&self, count: f64, m: f64) -> f64 {
        let r = self.dispersion;
        // log(r / (r + m)) and log(m / (r + m)) without cancellation
        let log_fail = -(m / r).ln_1p();
        let base = r * log_fail;
        if count == 0.0 {
            return base;
        }
        let log_success = -(r / m).ln_1p();
        ln_gamma(count + r) - self.ln_gamma_r - ln_gamma(count + 1.0) + base + count * log_success
    }

    /// Checked variant of the log-likelihood that validates the count.
    pub fn checked_log_likelihood(&self, x: f64, count: f64) -> Result<f64> {
        self.validate(&[count])?;
        Ok(self.log_pmf(count, self.mean(x)))
    }
}

impl ObservationModel for NegativeBinomialObservation {
    fn state_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn log_likelihood(&self, x: &[f64], y: &[f64]) -> f64 {
        self.log_pmf(y[0], self.mean(x[0]))
    }

    fn grad_log_likelihood(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let m = self.mean(x[0]);
        let r = self.dispersion;
        out[0] = self.theta3 * r * (y[0] - m) / (r + m);
    }

    fn sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let m = self.mean(x[0]);
        let r = self.dispersion;
        let rate = Gamma::new(r, m / r).expect("valid gamma parameters").sample(rng);
        if rate <= 0.0 {
            return vec![0.0];
        }
        vec![Poisson::new(rate).expect("positive Poisson rate").sample(rng)]
    }

    fn validate(&self, y: &[f64]) -> Result<()> {
        if y.len() != 1 {
            return Err(Error::DimensionMismatch {
                context: "negative binomial observation",
                expected: 1,
                got: y.len(),
            });
        }
        let c = y[0];
        if !(c.is_finite() && c >= 0.0 && c.fract() == 0.0) {
            return Err(Error::InvalidObservation(format!(
                "negative binomial counts must be non-negative integers, got {c}"
            )));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!("theta4={}", self.dispersion)
    }
}

/// Negative binomial observation model with dispersion `θ₄` and mean
/// `exp(θ₃ x)`.
pub fn nb_obs(theta3: f64, theta4: f64) -> Result<NegativeBinomialObservation> {
    NegativeBinomialObservation::new(theta3, theta4)
}
