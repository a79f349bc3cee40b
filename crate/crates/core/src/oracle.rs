//! Closed-form Ornstein–Uhlenbeck quantities and Kalman evidence.
//!
//! For `dX = −X dt + dB` observed through `Y ~ N(X_T, σ_Y² I)`, every object
//! the filters need is Gaussian: the transition over a lag `s`, the
//! h-function, its log-gradient (the optimal control) and the law of `X_T`
//! conditioned on the observation. Times are absolute within `[0, T]` and
//! the lag is `s = T − t`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::filters::Guide;
use crate::sde::{check_dim, TimeGrid};

#[derive(Debug, Clone)]
pub struct OuClosedForm {
    dim: usize,
    sigma_y: f64,
    horizon: f64,
}

/// Which transition law the Kalman oracle uses between observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KalmanMode {
    /// Exact OU transition over `T`.
    Continuous,
    /// The one-interval law of the Euler chain with the given step.
    Discretized { step: f64 },
}

impl OuClosedForm {
    pub fn new(dim: usize, sigma_y: f64, horizon: f64) -> Result<Self> {
        if dim == 0 || !(sigma_y > 0.0 && sigma_y.is_finite()) || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "OU closed form needs dim >= 1, sigma_y > 0, T > 0 (got {dim}, {sigma_y}, {horizon})"
            )));
        }
        Ok(Self { dim, sigma_y, horizon })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma_y(&self) -> f64 {
        self.sigma_y
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Transition variance `(1 − e^{−2s})/2`.
    pub fn sigma_x2(s: f64) -> f64 {
        -(-2.0 * s).exp_m1() / 2.0
    }

    /// Transition mean `x e^{−s}`, one coordinate.
    pub fn mu_x(x: f64, s: f64) -> f64 {
        x * (-s).exp()
    }

    /// `(σ_X⁻²(s) + σ_Y⁻²)⁻¹`.
    pub fn sigma_h2(&self, s: f64) -> f64 {
        1.0 / (1.0 / Self::sigma_x2(s) + 1.0 / (self.sigma_y * self.sigma_y))
    }

    fn lag(&self, t: f64, closed: bool) -> Result<f64> {
        let admissible = if closed { t <= self.horizon } else { t < self.horizon };
        if t >= 0.0 && admissible {
            Ok(self.horizon - t)
        } else {
            Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
                closed,
            })
        }
    }

    fn log_g(&self, x: &[f64], y: &[f64]) -> f64 {
        let s2 = self.sigma_y * self.sigma_y;
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum();
        -0.5 * self.dim as f64 * (2.0 * PI * s2).ln() - sq / (2.0 * s2)
    }

    /// `log h(x, y, t)`; at `t = T` this is `log g(x, y)`.
    pub fn log_h(&self, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
        check_dim("state", self.dim, x.len())?;
        check_dim("observation", self.dim, y.len())?;
        let s = self.lag(t, true)?;
        if s == 0.0 {
            return Ok(self.log_g(x, y));
        }
        let d = self.dim as f64;
        let sx2 = Self::sigma_x2(s);
        let sy2 = self.sigma_y * self.sigma_y;
        let sh2 = self.sigma_h2(s);
        let mut precision_mean = 0.0;
        let mut prior = 0.0;
        let mut data = 0.0;
        for (xi, yi) in x.iter().zip(y) {
            let mu = Self::mu_x(*xi, s);
            let a = mu / sx2 + yi / sy2;
            precision_mean += a * a;
            prior += mu * mu;
            data += yi * yi;
        }
        Ok(-0.5 * d * (2.0 * PI).ln() - 0.5 * d * sx2.ln() - 0.5 * d * sy2.ln() + 0.5 * d * sh2.ln()
            + 0.5 * sh2 * precision_mean
            - prior / (2.0 * sx2)
            - data / (2.0 * sy2))
    }

    pub fn h(&self, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
        self.log_h(x, y, t).map(f64::exp)
    }

    /// Value function `v = −log h`.
    pub fn value(&self, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
        self.log_h(x, y, t).map(|v| -v)
    }

    /// Optimal control `c⋆(x, y, t) = ∇ₓ log h`, defined for `0 ≤ t < T`.
    pub fn optimal_control(&self, x: &[f64], y: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        check_dim("state", self.dim, x.len())?;
        check_dim("observation", self.dim, y.len())?;
        check_dim("control output", self.dim, out.len())?;
        self.lag(t, false)?;
        self.control_unchecked(x, y, t, out);
        Ok(())
    }

    fn control_unchecked(&self, x: &[f64], y: &[f64], t: f64, out: &mut [f64]) {
        let s = self.horizon - t;
        let decay = (-s).exp();
        let sx2 = Self::sigma_x2(s);
        let sy2 = self.sigma_y * self.sigma_y;
        let sh2 = self.sigma_h2(s);
        for i in 0..self.dim {
            let mu = Self::mu_x(x[i], s);
            out[i] = sh2 * decay / sx2 * (mu / sx2 + y[i] / sy2) - decay / sx2 * mu;
        }
    }

    /// Mean of `X_T` given `X_0 = x0` and the observation `y` at `T`.
    pub fn conditioned_mean(&self, x0: &[f64], y: &[f64]) -> Vec<f64> {
        let s = self.horizon;
        let sx2 = Self::sigma_x2(s);
        let sy2 = self.sigma_y * self.sigma_y;
        let sh2 = self.sigma_h2(s);
        x0.iter()
            .zip(y)
            .map(|(x, y)| sh2 * (Self::mu_x(*x, s) / sx2 + y / sy2))
            .collect()
    }

    /// Exact draw of `X_T | X_0 = x0, Y_T = y`.
    pub fn conditioned_sample<R: Rng + ?Sized>(&self, x0: &[f64], y: &[f64], rng: &mut R) -> Vec<f64> {
        let sd = self.sigma_h2(self.horizon).sqrt();
        let mut mean = self.conditioned_mean(x0, y);
        mean.iter_mut()
            .for_each(|m| *m += sd * rng.sample::<f64, _>(StandardNormal));
        mean
    }

    /// Exact draw of `X_{t+s} | X_t = x`.
    pub fn sample_transition<R: Rng + ?Sized>(&self, x: &[f64], s: f64, rng: &mut R) -> Vec<f64> {
        let sd = Self::sigma_x2(s).sqrt();
        x.iter()
            .map(|xi| Self::mu_x(*xi, s) + sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// `(a, q)` such that `X_T | X_0 = x ~ N(a x, q I)` under `mode`.
    pub fn transition(&self, mode: KalmanMode) -> Result<(f64, f64)> {
        Ok(match mode {
            KalmanMode::Continuous => ((-self.horizon).exp(), Self::sigma_x2(self.horizon)),
            KalmanMode::Discretized { step } => {
                let grid = TimeGrid::new(self.horizon, step)?;
                let r = 1.0 - grid.step();
                let n = grid.n_steps() as i32;
                let q = (0..n).map(|i| r.powi(2 * i) * grid.step()).sum();
                (r.powi(n), q)
            }
        })
    }

    /// `log p(y | X_0 = x0)` and a draw of `X_T | X_0 = x0, Y_T = y` for the
    /// transition `(a, q)` returned by [`OuClosedForm::transition`].
    pub fn fully_adapted_draw<R: Rng + ?Sized>(
        &self,
        x0: &[f64],
        y: &[f64],
        (a, q): (f64, f64),
        rng: &mut R,
    ) -> (f64, Vec<f64>) {
        let sy2 = self.sigma_y * self.sigma_y;
        let s = q + sy2;
        let gain = q / s;
        let sd = (q * sy2 / s).sqrt();
        let mut log_w = -0.5 * self.dim as f64 * (2.0 * PI * s).ln();
        let x = x0
            .iter()
            .zip(y)
            .map(|(x, y)| {
                let prior = a * x;
                log_w -= (y - prior).powi(2) / (2.0 * s);
                prior + gain * (y - prior) + sd * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        (log_w, x)
    }

    /// Exact `log p(y_1, …, y_K)` for observations at `T, 2T, …` with the
    /// stationary prior `N(0, I/2)` at time zero.
    pub fn kalman_evidence(&self, observations: &[Vec<f64>], mode: KalmanMode) -> Result<f64> {
        let (a, q) = self.transition(mode)?;
        let sy2 = self.sigma_y * self.sigma_y;
        let mut total = 0.0;
        for i in 0..self.dim {
            let (mut m, mut p) = (0.0, 0.5);
            for (k, y) in observations.iter().enumerate() {
                check_dim("observation", self.dim, y.len()).map_err(|e| e.at_observation(k + 1))?;
                m *= a;
                p = a * a * p + q;
                let s = p + sy2;
                let innovation = y[i] - m;
                total += -0.5 * (2.0 * PI * s).ln() - innovation * innovation / (2.0 * s);
                let gain = p / s;
                m += gain * innovation;
                p *= 1.0 - gain;
            }
        }
        Ok(total)
    }
}

/// Exact-APF guide: `V̂₀ = v(·, ·, 0)` and `ĉ = c⋆`. Only evaluated on grid
/// nodes `t < T`.
impl Guide for OuClosedForm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn initial_value(&self, x: &[f64], y: &[f64]) -> f64 {
        -self.log_h(x, y, 0.0).expect("valid OU oracle arguments")
    }

    fn control(&self, x: &[f64], y: &[f64], t: f64, out: &mut [f64]) {
        debug_assert!(t < self.horizon);
        self.control_unchecked(x, y, t, out);
    }
}
