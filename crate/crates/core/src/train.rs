//! CDT training: simulate controlled state/value pairs, evaluate the
//! terminal-mismatch loss and update `(N₀, N)` with Adam.
//!
//! The state path never depends on the trainable parameters (the control is
//! zero or a detached copy of `−N`), so the loss gradient only flows through
//! the explicit network evaluations in the value recursion
//!
//! ```text
//! V_T = N₀(X₀, Y) + Σ_m (½‖Z_m‖² + ⟨c_m, Z_m⟩)δt + ⟨Z_m, δB_m⟩,   Z_m = N(X_m, Y, t_m)
//! ```
//!
//! and `∂V_T/∂Z_m = (Z_m + c_m)δt + δB_m`.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{Guide, GuideControl};
use crate::models::{Scenario, TrainingDistributions};
use crate::neural::{AdamConfig, AdamState, ControlNetworks, MlpCache};
use crate::rng::{stream, tag};
use crate::sde::{
    euler_update, sample_brownian_path, simulate_controlled_pair, BrownianPath, EulerWorkspace,
    TimeGrid, ValueIntegrand, ZeroControl,
};

/// Paths per reduction chunk. Gradients are summed within a chunk and then
/// across chunks in index order, independently of the thread count.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// `c ≡ 0`.
    Static,
    /// `c = −N` with the current parameters, detached.
    Iterative,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Static => "static",
            Scheme::Iterative => "iterative",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Scheme::Static),
            "iterative" => Ok(Scheme::Iterative),
            other => Err(Error::InvalidParameter(format!("unknown training scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub n_iterations: usize,
    pub j_obs: usize,
    pub j_mini: usize,
    pub scheme: Scheme,
    pub grid: TimeGrid,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl TrainConfig {
    /// 2000 iterations, 10 observations × 100 paths, `T = 1`, `δt = 0.02`,
    /// learning rate 0.01.
    pub fn standard(scheme: Scheme, seed: u64) -> Self {
        Self {
            n_iterations: 2000,
            j_obs: 10,
            j_mini: 100,
            scheme,
            grid: TimeGrid::standard(),
            adam: AdamConfig::default(),
            seed,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.j_obs * self.j_mini
    }

    pub fn validate(&self) -> Result<()> {
        if self.j_obs == 0 || self.j_mini == 0 {
            return Err(Error::InvalidParameter("j_obs and j_mini must be positive".into()));
        }
        if !(self.adam.learning_rate > 0.0 && self.adam.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub losses: Vec<f64>,
}

/// Initial states and (repeated) observations for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x0: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }
}

/// `j_obs` observations from `η_Y`, tiled `j_mini` times, and `J`
/// independent initial states from `η_X`.
pub fn batch_sample(j_obs: usize, j_mini: usize, dists: &TrainingDistributions, rng: &mut dyn RngCore) -> Batch {
    let observations: Vec<Vec<f64>> = (0..j_obs).map(|_| dists.eta_y.sample(rng)).collect();
    let n = j_obs * j_mini;
    let x0 = (0..n).map(|_| dists.eta_x.sample(rng)).collect();
    let y = (0..n).map(|i| observations[i % j_obs].clone()).collect();
    Batch { x0, y }
}

/// Batch and Brownian paths for iteration `iteration`, from dedicated streams.
pub fn iteration_inputs(config: &TrainConfig, dists: &TrainingDistributions, iteration: usize) -> (Batch, Vec<BrownianPath>) {
    let it = iteration as u64;
    let batch = batch_sample(config.j_obs, config.j_mini, dists, &mut stream(config.seed, &[tag::TRAIN, it, 0]));
    let dim = dists.eta_x.dim();
    let paths = (0..batch.len())
        .map(|i| sample_brownian_path(&config.grid, dim, &mut stream(config.seed, &[tag::TRAIN, it, 1, i as u64])))
        .collect();
    (batch, paths)
}

/// Control used to move the state during training.
#[derive(Clone, Copy)]
pub enum ControlMode<'a> {
    Zero,
    /// `c = −N` evaluated with a separate, frozen copy of the networks.
    Detached(&'a ControlNetworks),
    /// `c = −N` with the networks being differentiated, treated as constant.
    SelfDetached,
}

impl ControlMode<'_> {
    pub fn for_scheme(scheme: Scheme) -> Self {
        match scheme {
            Scheme::Static => ControlMode::Zero,
            Scheme::Iterative => ControlMode::SelfDetached,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub value_grad: Vec<f64>,
    pub control_grad: Vec<f64>,
}

struct ChunkWork {
    value_cache: MlpCache,
    step_caches: Vec<MlpCache>,
    z: Vec<f64>,
    c: Vec<f64>,
    input: Vec<f64>,
    frozen: crate::neural::Scratch,
    cot: Vec<f64>,
    ws: EulerWorkspace,
}

fn check_batch(nets: &ControlNetworks, scenario: &Scenario, batch: &Batch, paths: &[BrownianPath], grid: &TimeGrid) -> Result<()> {
    let d = scenario.state_dim();
    crate::sde::check_dim("network state dimension", d, nets.state_dim())?;
    crate::sde::check_dim("network observation dimension", scenario.obs_dim(), nets.obs_dim())?;
    crate::sde::check_dim("Brownian paths per batch", batch.len(), paths.len())?;
    for ((x, y), p) in batch.x0.iter().zip(&batch.y).zip(paths) {
        crate::sde::check_dim("initial state", d, x.len())?;
        crate::sde::check_dim("observation", scenario.obs_dim(), y.len())?;
        crate::sde::check_dim("Brownian path", d, p.dim())?;
        crate::sde::check_dim("Brownian path steps", grid.n_steps(), p.n_steps())?;
    }
    Ok(())
}

/// MC loss `J⁻¹ Σ (V_T + log g(X_T, Y))²` and its parameter gradient with
/// frozen noise.
pub fn loss_and_gradient(
    nets: &ControlNetworks,
    mode: ControlMode<'_>,
    scenario: &Scenario,
    batch: &Batch,
    paths: &[BrownianPath],
    grid: &TimeGrid,
) -> Result<LossGradient> {
    check_batch(nets, scenario, batch, paths, grid)?;
    let n_value = nets.value_net().n_params();
    let n_control = nets.control_net().n_params();
    let j = batch.len() as f64;
    let d = scenario.state_dim();
    let steps = grid.n_steps();
    let dt = grid.step();

    let chunks: Vec<Result<(f64, Vec<f64>, Vec<f64>)>> = (0..batch.len())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|indices| {
            let mut work = ChunkWork {
                value_cache: MlpCache::default(),
                step_caches: vec![MlpCache::default(); steps],
                z: vec![0.0; steps * d],
                c: vec![0.0; steps * d],
                input: Vec::new(),
                frozen: Default::default(),
                cot: vec![0.0; d],
                ws: EulerWorkspace::new(d),
            };
            let mut loss = 0.0;
            let mut gv = vec![0.0; n_value];
            let mut gc = vec![0.0; n_control];
            for &i in indices {
                let r = simulate_path(nets, mode, scenario, &batch.x0[i], &batch.y[i], &paths[i], grid, &mut work)
                    .map_err(|e| e.on_path(i))?;
                loss += r * r;
                let scale = 2.0 * r / j;
                nets.value_net().accumulate_gradient(&work.value_cache, &[scale], &mut gv)?;
                let db = paths[i].increments();
                for m in 0..steps {
                    let range = m * d..(m + 1) * d;
                    for (k, idx) in range.clone().enumerate() {
                        work.cot[k] = scale * ((work.z[idx] + work.c[idx]) * dt + db[idx]);
                    }
                    nets.control_net().accumulate_gradient(&work.step_caches[m], &work.cot, &mut gc)?;
                }
            }
            Ok((loss, gv, gc))
        })
        .collect();

    let mut loss = 0.0;
    let mut value_grad = vec![0.0; n_value];
    let mut control_grad = vec![0.0; n_control];
    for chunk in chunks {
        let (l, gv, gc) = chunk?;
        loss += l;
        value_grad.iter_mut().zip(&gv).for_each(|(a, b)| *a += b);
        control_grad.iter_mut().zip(&gc).for_each(|(a, b)| *a += b);
    }
    Ok(LossGradient {
        loss: loss / j,
        value_grad,
        control_grad,
    })
}

/// Run one coupled pair, filling the caches, and return the terminal
/// residual `V_T + log g(X_T, Y)`.
#[allow(clippy::too_many_arguments)]
fn simulate_path(
    nets: &ControlNetworks,
    mode: ControlMode<'_>,
    scenario: &Scenario,
    x0: &[f64],
    y: &[f64],
    path: &BrownianPath,
    grid: &TimeGrid,
    work: &mut ChunkWork,
) -> Result<f64> {
    let d = x0.len();
    let dt = grid.step();
    nets.value_input(x0, y, &mut work.input);
    nets.value_net().forward_into(&work.input, &mut work.value_cache)?;
    let mut v = work.value_cache.output()[0];
    let mut x = x0.to_vec();
    for m in 0..grid.n_steps() {
        let t = grid.time(m);
        let range = m * d..(m + 1) * d;
        nets.control_input(&x, y, t, &mut work.input);
        nets.control_net().forward_into(&work.input, &mut work.step_caches[m])?;
        work.z[range.clone()].copy_from_slice(work.step_caches[m].output());
        match mode {
            ControlMode::Zero => work.c[range.clone()].fill(0.0),
            ControlMode::SelfDetached => {
                for idx in range.clone() {
                    work.c[idx] = -work.z[idx];
                }
            }
            ControlMode::Detached(frozen) => {
                frozen.control_output_with(&x, y, t, &mut work.c[range.clone()], &mut work.frozen)?;
                work.c[range.clone()].iter_mut().for_each(|v| *v = -*v);
            }
        }
        let db = path.increment(m);
        v = crate::sde::value_step(v, &work.z[range.clone()], &work.c[range.clone()], dt, db);
        euler_update(scenario.diffusion.as_ref(), &mut x, &work.c[range], dt, db, &mut work.ws, m)?;
        if !v.is_finite() {
            return Err(Error::Divergence { step: m, path: None });
        }
    }
    let r = v + scenario.observation.log_likelihood(&x, y);
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::Divergence {
            step: grid.n_steps(),
            path: None,
        })
    }
}

/// The MC loss with an arbitrary guide standing in for the networks:
/// `N₀ = V̂₀` and `N = −ĉ`. Used to evaluate closed-form controls.
pub fn guide_loss(
    guide: &dyn Guide,
    scheme: Scheme,
    scenario: &Scenario,
    batch: &Batch,
    paths: &[BrownianPath],
    grid: &TimeGrid,
) -> Result<f64> {
    crate::sde::check_dim("Brownian paths per batch", batch.len(), paths.len())?;
    let control = GuideControl(guide);
    let negated = crate::sde::Negated(&control);
    let zero = ZeroControl { dim: guide.dim() };
    let residuals: Vec<Result<f64>> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let (x0, y) = (&batch.x0[i], &batch.y[i]);
            let v0 = guide.initial_value(x0, y);
            let out = match scheme {
                Scheme::Static => simulate_controlled_pair(
                    x0,
                    v0,
                    y,
                    scenario.diffusion.as_ref(),
                    &zero,
                    ValueIntegrand::Function(&negated),
                    grid,
                    &paths[i],
                    false,
                ),
                Scheme::Iterative => simulate_controlled_pair(
                    x0,
                    v0,
                    y,
                    scenario.diffusion.as_ref(),
                    &control,
                    ValueIntegrand::NegatedControl,
                    grid,
                    &paths[i],
                    false,
                ),
            }
            .map_err(|e| e.on_path(i))?;
            Ok(out.v_terminal + scenario.observation.log_likelihood(&out.x_terminal, y))
        })
        .collect();
    let mut total = 0.0;
    for r in residuals {
        let r = r?;
        total += r * r;
    }
    Ok(total / batch.len() as f64)
}

/// Optimizer state carried across iterations.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub networks: ControlNetworks,
    value_adam: AdamState,
    control_adam: AdamState,
}

impl Trainer {
    pub fn new(networks: ControlNetworks, adam: AdamConfig) -> Self {
        let value_adam = AdamState::new(networks.value_net().n_params(), adam);
        let control_adam = AdamState::new(networks.control_net().n_params(), adam);
        Self {
            networks,
            value_adam,
            control_adam,
        }
    }

    /// One loss evaluation and Adam update; returns the loss before the
    /// update.
    pub fn train_iteration(&mut self, config: &TrainConfig, scenario: &Scenario, iteration: usize) -> Result<f64> {
        let wrap = |source: Error| Error::AtIteration {
            iteration,
            seed: config.seed,
            source: Box::new(source),
        };
        let (batch, paths) = iteration_inputs(config, &scenario.training, iteration);
        let lg = loss_and_gradient(
            &self.networks,
            ControlMode::for_scheme(config.scheme),
            scenario,
            &batch,
            &paths,
            &config.grid,
        )
        .map_err(wrap)?;
        self.value_adam
            .update(self.networks.value_net_mut().params_mut(), &lg.value_grad)?;
        self.control_adam
            .update(self.networks.control_net_mut().params_mut(), &lg.control_grad)?;
        Ok(lg.loss)
    }
}

/// Train for `config.n_iterations`, calling `on_iteration(i, loss, nets)`
/// after each update.
pub fn train_with<F>(
    networks: ControlNetworks,
    config: &TrainConfig,
    scenario: &Scenario,
    mut on_iteration: F,
) -> Result<(ControlNetworks, LossTrace)>
where
    F: FnMut(usize, f64, &ControlNetworks) -> Result<()>,
{
    config.validate()?;
    let mut trainer = Trainer::new(networks, config.adam);
    let mut trace = LossTrace::default();
    for i in 0..config.n_iterations {
        let loss = trainer.train_iteration(config, scenario, i)?;
        trace.losses.push(loss);
        on_iteration(i, loss, &trainer.networks)?;
    }
    Ok((trainer.networks, trace))
}

pub fn train(networks: ControlNetworks, config: &TrainConfig, scenario: &Scenario) -> Result<(ControlNetworks, LossTrace)> {
    train_with(networks, config, scenario, |_, _, _| Ok(()))
}
