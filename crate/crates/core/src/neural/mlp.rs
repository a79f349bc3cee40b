//! Two-hidden-layer perceptron with Leaky ReLU activations and
//! reverse-mode parameter gradients.
//!
//! Parameters live in one flat vector. Each layer stores its weight matrix
//! (`out × in`, row-major) followed by its bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::check_dim;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// `[input, hidden₁, hidden₂, output]`.
    sizes: [usize; 4],
    alpha: f64,
    params: Vec<f64>,
}

/// Activations retained by [`MlpParams::forward_into`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    input: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    act2: Vec<f64>,
    output: Vec<f64>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Hidden pre-activations of layers one and two.
    pub fn pre_activations(&self) -> (&[f64], &[f64]) {
        (&self.pre1, &self.pre2)
    }
}

#[inline]
fn leaky(z: f64, alpha: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        alpha * z
    }
}

#[inline]
fn leaky_slope(z: f64, alpha: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        alpha
    }
}

/// `out = W·input + b` for a row-major `W`.
fn affine(w: &[f64], b: &[f64], input: &[f64], out: &mut [f64]) {
    let n_in = input.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
        let mut acc = *bias;
        for (wi, xi) in row.iter().zip(input) {
            acc += wi * xi;
        }
        *o = acc;
    }
}

fn param_count(sizes: &[usize; 4]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl MlpParams {
    /// All-zero network.
    pub fn zeros(sizes: [usize; 4], alpha: f64) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(Error::InvalidParameter(format!("layer sizes must be positive, got {sizes:?}")));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("leaky slope must be non-negative, got {alpha}")));
        }
        Ok(Self {
            sizes,
            alpha,
            params: vec![0.0; param_count(&sizes)],
        })
    }

    /// Weights and biases drawn from `U(−1/√fan_in, 1/√fan_in)`.
    pub fn init_uniform<R: Rng + ?Sized>(sizes: [usize; 4], alpha: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, alpha)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let n = w[1] * w[0] + w[1];
            for p in &mut net.params[offset..offset + n] {
                *p = rng.random_range(-bound..bound);
            }
            offset += n;
        }
        Ok(net)
    }

    pub fn from_parts(sizes: [usize; 4], alpha: f64, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes, alpha)?;
        check_dim("MLP parameter vector", net.params.len(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("non-finite MLP parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> [usize; 4] {
        self.sizes
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[3]
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(weights, bias)` of layer `l ∈ {0, 1, 2}`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (w, b) = self.layer_ranges(l);
        (&self.params[w], &self.params[b])
    }

    fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let s = &self.sizes;
        let start: usize = (0..l).map(|i| s[i + 1] * s[i] + s[i + 1]).sum();
        let w_end = start + s[l + 1] * s[l];
        (start..w_end, w_end..w_end + s[l + 1])
    }

    pub fn forward_into(&self, input: &[f64], cache: &mut MlpCache) -> Result<()> {
        check_dim("MLP input", self.sizes[0], input.len())?;
        let [_, h1, h2, out] = self.sizes;
        cache.input.clear();
        cache.input.extend_from_slice(input);
        cache.pre1.resize(h1, 0.0);
        cache.act1.resize(h1, 0.0);
        cache.pre2.resize(h2, 0.0);
        cache.act2.resize(h2, 0.0);
        cache.output.resize(out, 0.0);

        let (w, b) = self.layer(0);
        affine(w, b, input, &mut cache.pre1);
        for (a, z) in cache.act1.iter_mut().zip(&cache.pre1) {
            *a = leaky(*z, self.alpha);
        }
        let (w, b) = self.layer(1);
        affine(w, b, &cache.act1, &mut cache.pre2);
        for (a, z) in cache.act2.iter_mut().zip(&cache.pre2) {
            *a = leaky(*z, self.alpha);
        }
        let (w, b) = self.layer(2);
        affine(w, b, &cache.act2, &mut cache.output);
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let mut cache = MlpCache::default();
        self.forward_into(input, &mut cache)?;
        Ok((cache.output.clone(), cache))
    }

    /// Add `∂⟨cotangent, output⟩/∂params` into `grad`.
    pub fn accumulate_gradient(&self, cache: &MlpCache, cotangent: &[f64], grad: &mut [f64]) -> Result<()> {
        let [n_in, h1, h2, _] = self.sizes;
        check_dim("MLP cotangent", self.sizes[3], cotangent.len())?;
        check_dim("MLP gradient buffer", self.params.len(), grad.len())?;
        check_dim("MLP cache", n_in, cache.input.len())?;
        check_dim("MLP cache", h1, cache.pre1.len())?;
        check_dim("MLP cache", h2, cache.pre2.len())?;

        let mut delta2 = vec![0.0; h2];
        let mut delta1 = vec![0.0; h1];

        let (w3, b3) = self.layer_ranges(2);
        let w3_params = &self.params[w3.clone()];
        for (k, &ck) in cotangent.iter().enumerate() {
            if ck == 0.0 {
                continue;
            }
            grad[b3.start + k] += ck;
            let row = &mut grad[w3.start + k * h2..w3.start + (k + 1) * h2];
            for (g, a) in row.iter_mut().zip(&cache.act2) {
                *g += ck * a;
            }
            for (d, w) in delta2.iter_mut().zip(&w3_params[k * h2..(k + 1) * h2]) {
                *d += ck * w;
            }
        }
        for (d, z) in delta2.iter_mut().zip(&cache.pre2) {
            *d *= leaky_slope(*z, self.alpha);
        }

        let (w2, b2) = self.layer_ranges(1);
        let w2_params = &self.params[w2.clone()];
        for (k, &dk) in delta2.iter().enumerate() {
            grad[b2.start + k] += dk;
            let row = &mut grad[w2.start + k * h1..w2.start + (k + 1) * h1];
            for (g, a) in row.iter_mut().zip(&cache.act1) {
                *g += dk * a;
            }
            for (d, w) in delta1.iter_mut().zip(&w2_params[k * h1..(k + 1) * h1]) {
                *d += dk * w;
            }
        }
        for (d, z) in delta1.iter_mut().zip(&cache.pre1) {
            *d *= leaky_slope(*z, self.alpha);
        }

        let (w1, b1) = self.layer_ranges(0);
        for (k, &dk) in delta1.iter().enumerate() {
            grad[b1.start + k] += dk;
            let row = &mut grad[w1.start + k * n_in..w1.start + (k + 1) * n_in];
            for (g, x) in row.iter_mut().zip(&cache.input) {
                *g += dk * x;
            }
        }
        Ok(())
    }

    /// Parameter gradient of `⟨cotangent, output⟩` at the cached input.
    pub fn backward(&self, cache: &MlpCache, cotangent: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_gradient(cache, cotangent, &mut grad)?;
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    /// Matrix-by-matrix evaluation written independently of the flat layout
    /// helpers.
    fn reference_forward(net: &MlpParams, input: &[f64]) -> Vec<f64> {
        let s = net.sizes();
        let p = net.params();
        let mut offset = 0;
        let mut h = input.to_vec();
        for l in 0..3 {
            let (n_in, n_out) = (s[l], s[l + 1]);
            let w: Vec<Vec<f64>> = (0..n_out)
                .map(|i| p[offset + i * n_in..offset + (i + 1) * n_in].to_vec())
                .collect();
            let b = &p[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            h = (0..n_out)
                .map(|i| {
                    let z = b[i] + (0..n_in).map(|j| w[i][j] * h[j]).sum::<f64>();
                    if l < 2 && z < 0.0 {
                        net.alpha() * z
                    } else {
                        z
                    }
                })
                .collect();
        }
        h
    }

    fn random_net(seed: u64) -> (MlpParams, Vec<f64>, Vec<f64>) {
        let mut rng = stream(seed, &[]);
        let sizes = [
            rng.random_range(1..5),
            rng.random_range(1..8),
            rng.random_range(1..8),
            rng.random_range(1..4),
        ];
        let net = MlpParams::init_uniform(sizes, 0.01, &mut rng).unwrap();
        let input: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let cot: Vec<f64> = (0..sizes[3]).map(|_| rng.random_range(-1.0..1.0)).collect();
        (net, input, cot)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpParams::zeros([3, 4, 5, 2], 0.01).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap().0, vec![0.0, 0.0]);
    }

    #[test]
    fn single_unit_leaky_branch() {
        // w1 = 1, b1 = 0, then identity-ish readout through layers 2 and 3.
        let net = MlpParams::from_parts([1, 1, 1, 1], 0.01, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let (out, cache) = net.forward(&[-1.0]).unwrap();
        assert_eq!(cache.pre_activations().0, &[-1.0]);
        assert_eq!(cache.act1, vec![-0.01]);
        assert!((out[0] - (-0.0001)).abs() < 1e-18);
        // Zero pre-activation takes the positive branch.
        let (_, cache) = net.forward(&[0.0]).unwrap();
        let g = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g[1], 1.0);
    }

    #[test]
    fn matches_reference_evaluation() {
        for seed in 0..20 {
            let (net, input, _) = random_net(seed);
            let (out, _) = net.forward(&input).unwrap();
            for (a, b) in out.iter().zip(reference_forward(&net, &input)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let net = MlpParams::zeros([2, 3, 3, 1], 0.01).unwrap();
        assert!(net.forward(&[1.0]).is_err());
        let (_, cache) = net.forward(&[1.0, 2.0]).unwrap();
        assert!(net.backward(&cache, &[1.0, 1.0]).is_err());
        assert!(MlpParams::zeros([2, 0, 3, 1], 0.01).is_err());
        assert!(MlpParams::from_parts([1, 1, 1, 1], 0.01, vec![0.0; 5]).is_err());
    }

    #[test]
    fn zero_cotangent_and_bias_identity() {
        let (net, input, cot) = random_net(99);
        let (_, cache) = net.forward(&input).unwrap();
        let zeros = vec![0.0; cot.len()];
        assert!(net.backward(&cache, &zeros).unwrap().iter().all(|g| *g == 0.0));
        let g = net.backward(&cache, &cot).unwrap();
        let (_, b3) = net.layer_ranges(2);
        assert_eq!(&g[b3], cot.as_slice());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = 1e-5;
        for seed in 100..120 {
            let (net, input, cot) = random_net(seed);
            let (_, cache) = net.forward(&input).unwrap();
            let grad = net.backward(&cache, &cot).unwrap();
            let functional = |p: &MlpParams| -> f64 {
                p.forward(&input).unwrap().0.iter().zip(&cot).map(|(o, c)| o * c).sum()
            };
            for i in 0..net.n_params() {
                let mut plus = net.clone();
                plus.params_mut()[i] += h;
                let mut minus = net.clone();
                minus.params_mut()[i] -= h;
                let fd = (functional(&plus) - functional(&minus)) / (2.0 * h);
                let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
                assert!(err < 1e-4, "seed {seed} param {i}: fd {fd} vs {}", grad[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn gradient_is_linear_in_cotangent(seed in 0u64..1000, scale in -3.0f64..3.0) {
            let (net, input, cot) = random_net(seed);
            let (_, cache) = net.forward(&input).unwrap();
            let g = net.backward(&cache, &cot).unwrap();
            let scaled: Vec<f64> = cot.iter().map(|c| c * scale).collect();
            let gs = net.backward(&cache, &scaled).unwrap();
            for (a, b) in g.iter().zip(&gs) {
                prop_assert!((a * scale - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn forward_output_is_finite(seed in 0u64..1000, x in proptest::collection::vec(-1e3f64..1e3, 4)) {
            let (net, input, _) = random_net(seed);
            let x = &x[..input.len()];
            let (out, _) = net.forward(x).unwrap();
            prop_assert!(out.iter().all(|v| v.is_finite()));
        }
    }
}
