use rand::Rng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `log Σ exp(v)`, or `−∞` for an empty or all-`−∞` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `1 / Σ W̄ᵢ²` for (possibly unnormalized) log-weights.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let lse = log_sum_exp(log_weights);
    if !lse.is_finite() {
        return Err(Error::ParticleCollapse);
    }
    let doubled: Vec<f64> = log_weights.iter().map(|w| 2.0 * (w - lse)).collect();
    Ok((-log_sum_exp(&doubled)).exp().clamp(1.0, log_weights.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

fn cumulative(normalized_log_weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = normalized_log_weights
        .iter()
        .map(|w| {
            acc += w.exp();
            acc
        })
        .collect();
    if let Some(last) = cdf.last_mut() {
        *last = f64::INFINITY;
    }
    cdf
}

/// Ancestor indices, each drawn independently with probability `W̄ᵢ`.
pub fn multinomial_indices(normalized_log_weights: &[f64], n: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    let cdf = cumulative(normalized_log_weights);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            cdf.partition_point(|c| *c <= u)
        })
        .collect()
}

/// Systematic resampling with a single uniform offset.
pub fn systematic_indices(normalized_log_weights: &[f64], n: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    let cdf = cumulative(normalized_log_weights);
    let offset: f64 = rng.random();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    for k in 0..n {
        let u = (k as f64 + offset) / n as f64;
        while cdf[i] <= u {
            i += 1;
        }
        out.push(i);
    }
    out
}

/// Outcome of one reweighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reweight {
    /// `log Σ W̄ᵢ · exp(incᵢ)`, the factor contributed to `p̂`.
    pub log_increment: f64,
    /// All increments were equal, so the weights did not change.
    pub uniform: bool,
}

/// Particle states with normalized log-weights and the running `log p̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    states: Vec<Vec<f64>>,
    log_weights: Vec<f64>,
    log_evidence: f64,
}

impl ParticleEnsemble {
    pub fn new(states: Vec<Vec<f64>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidParameter("ensemble needs at least one particle".into()));
        }
        let w = -(states.len() as f64).ln();
        Ok(Self {
            log_weights: vec![w; states.len()],
            states,
            log_evidence: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.states
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    pub fn ess(&self) -> Result<f64> {
        ess(&self.log_weights)
    }

    /// Multiply the weights by `exp(increments)`, accumulate the evidence
    /// factor and renormalize.
    pub fn reweight(&mut self, increments: &[f64]) -> Result<Reweight> {
        crate::sde::check_dim("weight increments", self.len(), increments.len())?;
        let first = increments[0];
        if first.is_finite() && increments.iter().all(|v| *v == first) {
            self.log_evidence += first;
            return Ok(Reweight {
                log_increment: first,
                uniform: true,
            });
        }
        let combined: Vec<f64> = self.log_weights.iter().zip(increments).map(|(w, i)| w + i).collect();
        let lse = log_sum_exp(&combined);
        if !lse.is_finite() {
            return Err(Error::ParticleCollapse);
        }
        self.log_evidence += lse;
        for (w, c) in self.log_weights.iter_mut().zip(&combined) {
            *w = c - lse;
        }
        Ok(Reweight {
            log_increment: lse,
            uniform: false,
        })
    }

    /// Replace the population by draws from the weighted ensemble and reset
    /// the weights to `1/M`. Returns the ancestor indices.
    pub fn resample(&mut self, scheme: Resampling, rng: &mut dyn RngCore) -> Vec<usize> {
        let n = self.len();
        let idx = match scheme {
            Resampling::Multinomial => multinomial_indices(&self.log_weights, n, rng),
            Resampling::Systematic => systematic_indices(&self.log_weights, n, rng),
        };
        self.states = idx.iter().map(|&i| self.states[i].clone()).collect();
        self.log_weights.fill(-(n as f64).ln());
        idx
    }

    /// `Σ W̄ᵢ f(xᵢ)`.
    pub fn weighted_mean(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.states
            .iter()
            .zip(&self.log_weights)
            .map(|(x, w)| w.exp() * f(x))
            .sum()
    }
}
