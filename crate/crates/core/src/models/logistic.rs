use rand::RngCore;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::models::StateSampler;
use crate::sde::DiffusionModel;

/// Logistic growth `dP = (θ₃²/2 + θ₁ - θ₂P)P dt + θ₃P dB` after the
/// Lamperti transform `X = log(P)/θ₃`, which has unit volatility and drift
/// `θ₁/θ₃ - (θ₂/θ₃) exp(θ₃ x)`.
#[derive(Debug, Clone, Copy)]
pub struct LogisticLamperti {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl LogisticLamperti {
    pub fn new(theta1: f64, theta2: f64, theta3: f64) -> Result<Self> {
        for (name, v) in [("theta1", theta1), ("theta2", theta2), ("theta3", theta3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self { theta1, theta2, theta3 })
    }

    /// Shape and rate of the Gamma stationary law of the population `P`.
    pub fn stationary_gamma(&self) -> (f64, f64) {
        let s2 = self.theta3 * self.theta3;
        let shape = 2.0 * (s2 / 2.0 + self.theta1) / s2 - 1.0;
        let rate = 2.0 * self.theta2 / s2;
        (shape, rate)
    }
}

impl DiffusionModel for LogisticLamperti {
    fn dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.theta1 / self.theta3 - (self.theta2 / self.theta3) * (self.theta3 * x[0]).exp();
    }

    fn volatility(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }

    fn diagonal_volatility(&self, _x: &[f64], out: &mut [f64]) -> bool {
        out[0] = 1.0;
        true
    }
}

/// Push-forward of `Gamma(shape, rate)` under `p ↦ log(p)/θ₃`.
#[derive(Debug, Clone, Copy)]
pub struct GammaLamperti {
    shape: f64,
    rate: f64,
    theta3: f64,
    gamma: Gamma<f64>,
}

impl GammaLamperti {
    pub fn new(shape: f64, rate: f64, theta3: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "degenerate stationary law: Gamma(shape={shape}, rate={rate})"
            )));
        }
        let gamma = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::InvalidParameter(format!("gamma law: {e}")))?;
        Ok(Self {
            shape,
            rate,
            theta3,
            gamma,
        })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl StateSampler for GammaLamperti {
    fn dim(&self) -> usize {
        1
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let p: f64 = self.gamma.sample(rng);
        vec![p.ln() / self.theta3]
    }
}

/// Lamperti-transformed logistic diffusion with its stationary law.
pub fn logistic_model(theta1: f64, theta2: f64, theta3: f64) -> Result<(LogisticLamperti, GammaLamperti)> {
    let model = LogisticLamperti::new(theta1, theta2, theta3)?;
    let (shape, rate) = model.stationary_gamma();
    let eta_x = GammaLamperti::new(shape, rate, theta3)?;
    Ok((model, eta_x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn drift_root() {
        let (m, _) = logistic_model(2.0, 0.5, 0.7).unwrap();
        let root = (2.0f64 / 0.5).ln() / 0.7;
        let mut out = [1.0];
        m.drift(&[root], &mut out);
        assert!(out[0].abs() < 1e-12);
    }

    #[test]
    fn unit_parameters_give_shape_two_rate_two() {
        let (_, eta) = logistic_model(1.0, 1.0, 1.0).unwrap();
        assert!((eta.shape() - 2.0).abs() < 1e-15);
        assert!((eta.rate() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_stationary_law_rejected() {
        assert!(logistic_model(1.0, 1.0, 0.0).is_err());
        assert!(logistic_model(-1.0, 1.0, 1.0).is_err());
        assert!(GammaLamperti::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn pushed_back_samples_have_gamma_mean() {
        let (_, eta) = logistic_model(2.397, 0.004429, 0.84).unwrap();
        let (shape, rate) = (eta.shape(), eta.rate());
        let mut rng = stream(31, &[]);
        let n = 200_000;
        let sum: f64 = (0..n).map(|_| (0.84 * eta.sample(&mut rng)[0]).exp()).sum();
        let mean = sum / n as f64;
        let se = (shape / (rate * rate) / n as f64).sqrt();
        assert!((mean - shape / rate).abs() < 3.0 * se, "mean {mean}");
    }
}
