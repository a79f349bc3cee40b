//! The pair `(N₀, N)`: the initial value network `N₀(x, y) ≈ v(x, y, 0)`
//! and the control network `N(x, y, t) ≈ −c⋆(x, y, t)`.

use std::cell::RefCell;
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::Guide;
use crate::models::TrainingDistributions;
use crate::neural::mlp::{MlpCache, MlpParams, DEFAULT_LEAKY_SLOPE};
use crate::sde::{check_dim, ControlFunction};

/// Hidden width `a·d + b` for state dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthPolicy {
    pub a: usize,
    pub b: usize,
}

impl Default for WidthPolicy {
    fn default() -> Self {
        Self { a: 10, b: 10 }
    }
}

impl WidthPolicy {
    pub fn width(&self, dim: usize) -> usize {
        self.a * dim + self.b
    }
}

/// Affine standardization of the state and observation inputs. Time enters
/// the control network as `t/T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub x_shift: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_shift: Vec<f64>,
    pub y_scale: Vec<f64>,
}

fn moments(samples: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        mean.iter_mut().zip(s).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; dim];
    for s in samples {
        var.iter_mut()
            .zip(s.iter().zip(&mean))
            .for_each(|(acc, (v, m))| *acc += (v - m) * (v - m) / n);
    }
    let scale = var
        .into_iter()
        .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, scale)
}

impl InputScaling {
    pub fn identity(state_dim: usize, obs_dim: usize) -> Self {
        Self {
            x_shift: vec![0.0; state_dim],
            x_scale: vec![1.0; state_dim],
            y_shift: vec![0.0; obs_dim],
            y_scale: vec![1.0; obs_dim],
        }
    }

    /// Mean and standard deviation of `n` draws from each training law.
    /// Degenerate coordinates keep unit scale.
    pub fn from_training<R: Rng>(dists: &TrainingDistributions, n: usize, rng: &mut R) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter("input scaling needs at least two samples".into()));
        }
        let xs: Vec<Vec<f64>> = (0..n).map(|_| dists.eta_x.sample(rng as &mut dyn RngCore)).collect();
        let ys: Vec<Vec<f64>> = (0..n).map(|_| dists.eta_y.sample(rng as &mut dyn RngCore)).collect();
        let (x_shift, x_scale) = moments(&xs, dists.eta_x.dim());
        let (y_shift, y_scale) = moments(&ys, dists.eta_y.dim());
        Ok(Self {
            x_shift,
            x_scale,
            y_shift,
            y_scale,
        })
    }

    fn validate(&self, state_dim: usize, obs_dim: usize) -> Result<()> {
        check_dim("state scaling", state_dim, self.x_shift.len())?;
        check_dim("state scaling", state_dim, self.x_scale.len())?;
        check_dim("observation scaling", obs_dim, self.y_shift.len())?;
        check_dim("observation scaling", obs_dim, self.y_scale.len())?;
        let all = self.x_shift.iter().chain(&self.y_shift);
        let scales = self.x_scale.iter().chain(&self.y_scale);
        if all.clone().any(|v| !v.is_finite()) || scales.clone().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter("input scaling must be finite with positive scales".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlNetworks {
    state_dim: usize,
    obs_dim: usize,
    horizon: f64,
    value_net: MlpParams,
    control_net: MlpParams,
    scaling: InputScaling,
}

/// Architecture and initialization options for [`ControlNetworks::init`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkSpec {
    pub width: WidthPolicy,
    pub alpha: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            width: WidthPolicy::default(),
            alpha: DEFAULT_LEAKY_SLOPE,
        }
    }
}

/// Default-architecture networks with identity input scaling on `[0, 1]`.
pub fn init_networks<R: Rng>(state_dim: usize, obs_dim: usize, width: WidthPolicy, rng: &mut R) -> Result<ControlNetworks> {
    ControlNetworks::init(
        state_dim,
        obs_dim,
        1.0,
        NetworkSpec {
            width,
            alpha: DEFAULT_LEAKY_SLOPE,
        },
        InputScaling::identity(state_dim, obs_dim),
        rng,
    )
}

impl ControlNetworks {
    pub fn init<R: Rng>(
        state_dim: usize,
        obs_dim: usize,
        horizon: f64,
        spec: NetworkSpec,
        scaling: InputScaling,
        rng: &mut R,
    ) -> Result<Self> {
        if state_dim == 0 || obs_dim == 0 {
            return Err(Error::InvalidParameter("network dimensions must be positive".into()));
        }
        let w = spec.width.width(state_dim);
        if w == 0 {
            return Err(Error::InvalidParameter("hidden width must be positive".into()));
        }
        let value_net = MlpParams::init_uniform([state_dim + obs_dim, w, w, 1], spec.alpha, rng)?;
        let control_net = MlpParams::init_uniform([state_dim + obs_dim + 1, w, w, state_dim], spec.alpha, rng)?;
        Self::from_parts(state_dim, obs_dim, horizon, value_net, control_net, scaling)
    }

    pub fn from_parts(
        state_dim: usize,
        obs_dim: usize,
        horizon: f64,
        value_net: MlpParams,
        control_net: MlpParams,
        scaling: InputScaling,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        check_dim("value network input", state_dim + obs_dim, value_net.input_dim())?;
        check_dim("value network output", 1, value_net.output_dim())?;
        check_dim("control network input", state_dim + obs_dim + 1, control_net.input_dim())?;
        check_dim("control network output", state_dim, control_net.output_dim())?;
        scaling.validate(state_dim, obs_dim)?;
        Ok(Self {
            state_dim,
            obs_dim,
            horizon,
            value_net,
            control_net,
            scaling,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn scaling(&self) -> &InputScaling {
        &self.scaling
    }

    pub fn value_net(&self) -> &MlpParams {
        &self.value_net
    }

    pub fn control_net(&self) -> &MlpParams {
        &self.control_net
    }

    pub fn value_net_mut(&mut self) -> &mut MlpParams {
        &mut self.value_net
    }

    pub fn control_net_mut(&mut self) -> &mut MlpParams {
        &mut self.control_net
    }

    pub fn hidden_width(&self) -> usize {
        self.control_net.sizes()[1]
    }

    fn encode_state_obs(&self, x: &[f64], y: &[f64], buf: &mut Vec<f64>) {
        let s = &self.scaling;
        buf.clear();
        buf.extend(x.iter().zip(s.x_shift.iter().zip(&s.x_scale)).map(|(v, (m, k))| (v - m) / k));
        buf.extend(y.iter().zip(s.y_shift.iter().zip(&s.y_scale)).map(|(v, (m, k))| (v - m) / k));
    }

    /// Network input for `N₀`.
    pub fn value_input(&self, x: &[f64], y: &[f64], buf: &mut Vec<f64>) {
        self.encode_state_obs(x, y, buf);
    }

    /// Network input for `N`.
    pub fn control_input(&self, x: &[f64], y: &[f64], t: f64, buf: &mut Vec<f64>) {
        self.encode_state_obs(x, y, buf);
        buf.push(t / self.horizon);
    }

    /// `N₀(x, y)`.
    pub fn initial_value_with(&self, x: &[f64], y: &[f64], scratch: &mut Scratch) -> Result<f64> {
        self.value_input(x, y, &mut scratch.input);
        self.value_net.forward_into(&scratch.input, &mut scratch.cache)?;
        Ok(scratch.cache.output()[0])
    }

    /// `N(x, y, t)` written into `out`.
    pub fn control_output_with(&self, x: &[f64], y: &[f64], t: f64, out: &mut [f64], scratch: &mut Scratch) -> Result<()> {
        check_dim("control output", self.state_dim, out.len())?;
        self.control_input(x, y, t, &mut scratch.input);
        self.control_net.forward_into(&scratch.input, &mut scratch.cache)?;
        out.copy_from_slice(scratch.cache.output());
        Ok(())
    }

    pub fn initial_value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        SCRATCH.with(|s| self.initial_value_with(x, y, &mut s.borrow_mut()))
    }

    pub fn control_output(&self, x: &[f64], y: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        SCRATCH.with(|s| self.control_output_with(x, y, t, out, &mut s.borrow_mut()))
    }

    /// `N` viewed as a [`ControlFunction`].
    pub fn z_function(&self) -> NetworkZ<'_> {
        NetworkZ(self)
    }
}

/// Reusable forward-pass buffers.
#[derive(Debug, Default)]
pub struct Scratch {
    input: Vec<f64>,
    cache: MlpCache,
}

thread_local! {
    static SCRATCH: RefCell<Scratch> = RefCell::new(Scratch::default());
}

/// `(x, y, t) ↦ N(x, y, t)`.
pub struct NetworkZ<'a>(&'a ControlNetworks);

impl ControlFunction for NetworkZ<'_> {
    fn dim(&self) -> usize {
        self.0.state_dim
    }

    fn evaluate(&self, x: &[f64], y: &[f64], t: f64, out: &mut [f64]) {
        self.0
            .control_output(x, y, t, out)
            .expect("state and observation dimensions checked by the caller");
    }
}

/// Learned APF guide: `V̂₀ = N₀` and `ĉ = −N`.
impl Guide for ControlNetworks {
    fn dim(&self) -> usize {
        self.state_dim
    }

    fn initial_value(&self, x: &[f64], y: &[f64]) -> f64 {
        ControlNetworks::initial_value(self, x, y).expect("dimensions checked by the caller")
    }

    fn control(&self, x: &[f64], y: &[f64], t: f64, out: &mut [f64]) {
        self.control_output(x, y, t, out).expect("dimensions checked by the caller");
        out.iter_mut().for_each(|v| *v = -*v);
    }
}

const CHECKPOINT_FORMAT: &str = "cdt-networks";
const CHECKPOINT_VERSION: u32 = 1;

/// Provenance stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: String,
    pub observation: String,
    pub scheme: String,
    pub iterations: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    state_dim: usize,
    obs_dim: usize,
    horizon: f64,
    scaling: InputScaling,
    value_net: MlpParams,
    control_net: MlpParams,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub networks: ControlNetworks,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let n = &self.networks;
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            state_dim: n.state_dim,
            obs_dim: n.obs_dim,
            horizon: n.horizon,
            scaling: n.scaling.clone(),
            value_net: n.value_net.clone(),
            control_net: n.control_net.clone(),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?} version {}",
                file.format, file.version
            )));
        }
        let rebuild = |net: MlpParams| MlpParams::from_parts(net.sizes(), net.alpha(), net.params().to_vec());
        let networks = ControlNetworks::from_parts(
            file.state_dim,
            file.obs_dim,
            file.horizon,
            rebuild(file.value_net)?,
            rebuild(file.control_net)?,
            file.scaling,
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self {
            networks,
            meta: file.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
