//! Diffusion abstractions and Euler–Maruyama integration of controlled SDEs
//! together with the coupled value process.
//!
//! A controlled diffusion on `[0, T]` evolves as
//!
//! ```text
//! dX_t = μ(X_t) dt + σ(X_t) c(X_t, y, t) dt + σ(X_t) dB_t
//! dV_t = (½‖Z_t‖² + ⟨c(X_t, y, t), Z_t⟩) dt + ⟨Z_t, dB_t⟩
//! ```
//!
//! and both processes are driven by the same Brownian increments. Brownian
//! paths are generated up front ([`BrownianPath`]) so that any consumer can
//! replay exactly the same noise.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Latent diffusion `dX = μ(X) dt + σ(X) dB` on ℝᵈ.
pub trait DiffusionModel: Send + Sync {
    fn dim(&self) -> usize;

    fn drift(&self, x: &[f64], out: &mut [f64]);

    /// Volatility matrix, written row-major into `out` (length d·d).
    fn volatility(&self, x: &[f64], out: &mut [f64]);

    /// Diagonal fast path. Models whose volatility is diagonal write the
    /// diagonal into `out` (length d) and return `true`.
    fn diagonal_volatility(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// A control (or value-gradient) function `(x, y, t) ↦ ℝᵈ`.
pub trait ControlFunction: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64], y: &[f64], t: f64, out: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct ZeroControl {
    pub dim: usize,
}

impl ControlFunction for ZeroControl {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, _x: &[f64], _y: &[f64], _t: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `-f(x, y, t)` for a wrapped control function `f`.
pub struct Negated<C>(pub C);

impl<C: ControlFunction> ControlFunction for Negated<C> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn evaluate(&self, x: &[f64], y: &[f64], t: f64, out: &mut [f64]) {
        self.0.evaluate(x, y, t, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }
}

impl<C: ControlFunction + ?Sized> ControlFunction for &C {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn evaluate(&self, x: &[f64], y: &[f64], t: f64, out: &mut [f64]) {
        (**self).evaluate(x, y, t, out)
    }
}

/// Uniform grid on `[0, T]` with `n_steps · step = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    step: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// Rejects step sizes that do not divide the horizon.
    pub fn new(horizon: f64, step: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) || !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time grid needs positive finite horizon and step, got T={horizon}, dt={step}"
            )));
        }
        let ratio = horizon / step;
        let n_steps = ratio.round();
        if n_steps < 1.0 || (ratio - n_steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "step {step} does not divide horizon {horizon}"
            )));
        }
        let n_steps = n_steps as usize;
        Ok(Self {
            horizon,
            step: horizon / n_steps as f64,
            n_steps,
        })
    }

    /// T = 1 with δt = 0.02.
    pub fn standard() -> Self {
        Self::new(1.0, 0.02).expect("standard grid is valid")
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Time of grid node `m`.
    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.step
    }

    /// The same horizon with `factor` times as many steps.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidParameter("refinement factor must be positive".into()));
        }
        Self::new(self.horizon, self.horizon / (self.n_steps * factor) as f64)
    }
}

/// Pre-generated Brownian increments, `n_steps` vectors of length `dim`
/// stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    dim: usize,
    step: f64,
    increments: Vec<f64>,
}

pub fn sample_brownian_path<R: Rng + ?Sized>(grid: &TimeGrid, dim: usize, rng: &mut R) -> BrownianPath {
    assert!(dim >= 1, "Brownian path dimension must be positive");
    let scale = grid.step().sqrt();
    let increments = (0..grid.n_steps() * dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    BrownianPath {
        dim,
        step: grid.step(),
        increments,
    }
}

impl BrownianPath {
    pub fn from_increments(dim: usize, step: f64, increments: Vec<f64>) -> Result<Self> {
        if dim == 0 || !increments.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                context: "Brownian increments",
                expected: dim,
                got: increments.len(),
            });
        }
        Ok(Self {
            dim,
            step,
            increments,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len() / self.dim
    }

    pub fn increment(&self, m: usize) -> &[f64] {
        &self.increments[m * self.dim..(m + 1) * self.dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Sum of all increments, i.e. `B_T - B_0`.
    pub fn terminal(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.dim];
        for chunk in self.increments.chunks_exact(self.dim) {
            total.iter_mut().zip(chunk).for_each(|(t, db)| *t += db);
        }
        total
    }

    /// Merge consecutive groups of `factor` increments: the same Brownian
    /// path seen on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let n = self.n_steps();
        if factor == 0 || !n.is_multiple_of(factor) {
            return Err(Error::InvalidParameter(format!(
                "cannot coarsen {n} steps by a factor of {factor}"
            )));
        }
        let mut increments = vec![0.0; (n / factor) * self.dim];
        for m in 0..n {
            let coarse = m / factor;
            for (i, db) in self.increment(m).iter().enumerate() {
                increments[coarse * self.dim + i] += db;
            }
        }
        Ok(Self {
            dim: self.dim,
            step: self.step * factor as f64,
            increments,
        })
    }
}

/// Scratch buffers for [`euler_update`], sized for one state dimension.
#[derive(Debug, Clone)]
pub struct EulerWorkspace {
    drift: Vec<f64>,
    vol: Vec<f64>,
    scaled_control: Vec<f64>,
    scaled_noise: Vec<f64>,
}

impl EulerWorkspace {
    pub fn new(dim: usize) -> Self {
        Self {
            drift: vec![0.0; dim],
            vol: vec![0.0; dim * dim],
            scaled_control: vec![0.0; dim],
            scaled_noise: vec![0.0; dim],
        }
    }
}

/// In-place Euler–Maruyama step `x ← x + (μ(x) + σ(x)c)δt + σ(x)δB` with a
/// pre-evaluated control value `c`. `step` only labels the error.
pub fn euler_update(
    model: &dyn DiffusionModel,
    x: &mut [f64],
    control: &[f64],
    dt: f64,
    db: &[f64],
    ws: &mut EulerWorkspace,
    step: usize,
) -> Result<()> {
    let d = x.len();
    model.drift(x, &mut ws.drift);
    if model.diagonal_volatility(x, &mut ws.vol[..d]) {
        for i in 0..d {
            ws.scaled_control[i] = ws.vol[i] * control[i];
            ws.scaled_noise[i] = ws.vol[i] * db[i];
        }
    } else {
        model.volatility(x, &mut ws.vol);
        for i in 0..d {
            let row = &ws.vol[i * d..(i + 1) * d];
            let mut sc = 0.0;
            let mut sn = 0.0;
            for j in 0..d {
                sc += row[j] * control[j];
                sn += row[j] * db[j];
            }
            ws.scaled_control[i] = sc;
            ws.scaled_noise[i] = sn;
        }
    }
    let mut finite = true;
    for i in 0..d {
        x[i] += (ws.drift[i] + ws.scaled_control[i]) * dt + ws.scaled_noise[i];
        finite &= x[i].is_finite();
    }
    if finite {
        Ok(())
    } else {
        Err(Error::Divergence { step, path: None })
    }
}

/// One Euler–Maruyama step of the controlled dynamics from `(x, t)`,
/// returning the new state.
#[allow(clippy::too_many_arguments)]
pub fn euler_step(
    x: &[f64],
    model: &dyn DiffusionModel,
    control: &dyn ControlFunction,
    y: &[f64],
    t: f64,
    dt: f64,
    db: &[f64],
    step: usize,
) -> Result<Vec<f64>> {
    let d = model.dim();
    check_dim("state", d, x.len())?;
    check_dim("Brownian increment", d, db.len())?;
    let mut c = vec![0.0; d];
    control.evaluate(x, y, t, &mut c);
    let mut next = x.to_vec();
    euler_update(model, &mut next, &c, dt, db, &mut EulerWorkspace::new(d), step)?;
    Ok(next)
}

/// `v + (½‖z‖² + ⟨c, z⟩)δt + ⟨z, δB⟩`.
pub fn value_step(v: f64, z: &[f64], c: &[f64], dt: f64, db: &[f64]) -> f64 {
    let mut quad = 0.0;
    let mut cross = 0.0;
    let mut noise = 0.0;
    for i in 0..z.len() {
        quad += z[i] * z[i];
        cross += c[i] * z[i];
        noise += z[i] * db[i];
    }
    v + (0.5 * quad + cross) * dt + noise
}

/// Source of the `Z` process driving the value recursion.
#[derive(Clone, Copy)]
pub enum ValueIntegrand<'a> {
    Function(&'a dyn ControlFunction),
    /// `Z = -c`, reusing the control evaluation (the filtering setting).
    NegatedControl,
}

#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub x_terminal: Vec<f64>,
    pub v_terminal: f64,
    /// States at every grid node, `n_steps + 1` entries, when requested.
    pub trajectory: Option<Vec<Vec<f64>>>,
}

/// Integrate the controlled state and the value process over the grid,
/// both consuming the increments of `path` in order.
///
/// Each step evaluates `Z` and `c` at the current node, advances `V`, then
/// advances `X`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_controlled_pair(
    x0: &[f64],
    v0: f64,
    y: &[f64],
    model: &dyn DiffusionModel,
    control: &dyn ControlFunction,
    z_source: ValueIntegrand<'_>,
    grid: &TimeGrid,
    path: &BrownianPath,
    record_trajectory: bool,
) -> Result<PairOutcome> {
    let d = model.dim();
    check_dim("initial state", d, x0.len())?;
    check_dim("Brownian path", d, path.dim())?;
    check_dim("Brownian path steps", grid.n_steps(), path.n_steps())?;
    check_dim("control", d, control.dim())?;

    let dt = grid.step();
    let mut x = x0.to_vec();
    let mut v = v0;
    let mut c = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut ws = EulerWorkspace::new(d);
    let mut trajectory = record_trajectory.then(|| {
        let mut states = Vec::with_capacity(grid.n_steps() + 1);
        states.push(x.clone());
        states
    });

    for m in 0..grid.n_steps() {
        let t = grid.time(m);
        let db = path.increment(m);
        control.evaluate(&x, y, t, &mut c);
        match z_source {
            ValueIntegrand::Function(f) => f.evaluate(&x, y, t, &mut z),
            ValueIntegrand::NegatedControl => {
                z.iter_mut().zip(&c).for_each(|(zi, ci)| *zi = -ci);
            }
        }
        v = value_step(v, &z, &c, dt, db);
        euler_update(model, &mut x, &c, dt, db, &mut ws, m)?;
        if !v.is_finite() {
            return Err(Error::Divergence { step: m, path: None });
        }
        if let Some(states) = trajectory.as_mut() {
            states.push(x.clone());
        }
    }

    Ok(PairOutcome {
        x_terminal: x,
        v_terminal: v,
        trajectory,
    })
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    struct Linear {
        dim: usize,
        drift_coef: f64,
        vol: f64,
    }

    impl DiffusionModel for Linear {
        fn dim(&self) -> usize {
            self.dim
        }
        fn drift(&self, x: &[f64], out: &mut [f64]) {
            out.iter_mut().zip(x).for_each(|(o, xi)| *o = self.drift_coef * xi);
        }
        fn volatility(&self, _x: &[f64], out: &mut [f64]) {
            out.fill(0.0);
            for i in 0..self.dim {
                out[i * self.dim + i] = self.vol;
            }
        }
    }

    struct DiagonalLinear(Linear);

    impl DiffusionModel for DiagonalLinear {
        fn dim(&self) -> usize {
            self.0.dim
        }
        fn drift(&self, x: &[f64], out: &mut [f64]) {
            self.0.drift(x, out)
        }
        fn volatility(&self, x: &[f64], out: &mut [f64]) {
            self.0.volatility(x, out)
        }
        fn diagonal_volatility(&self, _x: &[f64], out: &mut [f64]) -> bool {
            out.fill(self.0.vol);
            true
        }
    }

    struct ConstControl(Vec<f64>);

    impl ControlFunction for ConstControl {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn evaluate(&self, _x: &[f64], _y: &[f64], _t: f64, out: &mut [f64]) {
            out.copy_from_slice(&self.0);
        }
    }

    fn ou(dim: usize) -> Linear {
        Linear {
            dim,
            drift_coef: -1.0,
            vol: 1.0,
        }
    }

    #[test]
    fn grid_rejects_non_divisible_step() {
        assert!(TimeGrid::new(1.0, 0.03).is_err());
        assert!(TimeGrid::new(1.0, 0.0).is_err());
        let g = TimeGrid::new(1.0, 0.02).unwrap();
        assert_eq!(g.n_steps(), 50);
        assert_eq!(g.n_steps() as f64 * g.step(), g.horizon());
        assert_eq!(g.refine(2).unwrap().n_steps(), 100);
    }

    #[test]
    fn brownian_increment_variance_matches_step() {
        let grid = TimeGrid::standard();
        let mut rng = stream(1, &[]);
        let n_paths = 20_000; // 10⁶ increments
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n_paths {
            let path = sample_brownian_path(&grid, 1, &mut rng);
            for &db in path.increments() {
                sum += db;
                sum_sq += db * db;
            }
        }
        let n = (n_paths * grid.n_steps()) as f64;
        let mean = sum / n;
        let var = sum_sq / n - mean * mean;
        let se = 0.02 * (2.0 / n).sqrt();
        assert!((var - 0.02).abs() < 3.0 * se, "variance {var}");
    }

    #[test]
    fn brownian_paths_are_deterministic() {
        let grid = TimeGrid::standard();
        let a = sample_brownian_path(&grid, 3, &mut stream(5, &[9]));
        let b = sample_brownian_path(&grid, 3, &mut stream(5, &[9]));
        assert_eq!(a, b);
        assert_eq!(a.n_steps(), grid.n_steps());
    }

    #[test]
    fn terminal_covariance_is_horizon_times_identity() {
        let grid = TimeGrid::standard();
        let mut rng = stream(2, &[]);
        let n = 100_000;
        let (mut s00, mut s11, mut s01, mut m0, mut m1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let b = sample_brownian_path(&grid, 2, &mut rng).terminal();
            m0 += b[0];
            m1 += b[1];
            s00 += b[0] * b[0];
            s11 += b[1] * b[1];
            s01 += b[0] * b[1];
        }
        let nf = n as f64;
        let (m0, m1) = (m0 / nf, m1 / nf);
        let var_se = (2.0 / nf).sqrt();
        assert!((s00 / nf - m0 * m0 - 1.0).abs() < 3.0 * var_se);
        assert!((s11 / nf - m1 * m1 - 1.0).abs() < 3.0 * var_se);
        assert!((s01 / nf - m0 * m1).abs() < 3.0 / nf.sqrt());
    }

    #[test]
    fn coarsened_path_preserves_terminal_value() {
        let grid = TimeGrid::standard().refine(2).unwrap();
        let fine = sample_brownian_path(&grid, 2, &mut stream(3, &[]));
        let coarse = fine.coarsen(2).unwrap();
        assert_eq!(coarse.n_steps(), 50);
        assert!((coarse.step() - 0.02).abs() < 1e-15);
        for (a, b) in fine.terminal().iter().zip(coarse.terminal()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(fine.coarsen(3).is_err());
    }

    #[test]
    fn frozen_dynamics_leave_state_unchanged() {
        let model = Linear {
            dim: 2,
            drift_coef: 0.0,
            vol: 0.0,
        };
        let control = ConstControl(vec![5.0, -3.0]);
        let x = [0.3, -1.2];
        let next = euler_step(&x, &model, &control, &[0.0], 0.0, 0.02, &[0.7, 0.1], 0).unwrap();
        assert_eq!(next, x.to_vec());
    }

    #[test]
    fn pure_brownian_step_adds_increment() {
        let model = Linear {
            dim: 2,
            drift_coef: 0.0,
            vol: 1.0,
        };
        let zero = ZeroControl { dim: 2 };
        let next = euler_step(&[1.0, 2.0], &model, &zero, &[], 0.0, 0.02, &[0.25, -0.5], 0).unwrap();
        assert_eq!(next, vec![1.25, 1.5]);
    }

    #[test]
    fn euler_step_mean_on_ou() {
        let model = ou(1);
        let zero = ZeroControl { dim: 1 };
        let mut rng = stream(4, &[]);
        let n = 1_000_000;
        let dt: f64 = 0.02;
        let mut sum = 0.0;
        let mut ws = EulerWorkspace::new(1);
        for _ in 0..n {
            let db = dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let mut x = [1.0];
            euler_update(&model, &mut x, &[0.0], dt, &[db], &mut ws, 0).unwrap();
            sum += x[0];
        }
        // the convenience wrapper agrees with the in-place update
        let single = euler_step(&[1.0], &model, &zero, &[], 0.0, dt, &[0.1], 0).unwrap();
        assert_eq!(single[0], 1.0 + -dt + 0.1);
        let mean = sum / n as f64;
        let se = dt.sqrt() / (n as f64).sqrt();
        assert!((mean - 0.98).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn non_finite_state_reports_step() {
        let model = Linear {
            dim: 1,
            drift_coef: 1.0,
            vol: 1.0,
        };
        let mut ws = EulerWorkspace::new(1);
        let mut x = [f64::MAX];
        let err = euler_update(&model, &mut x, &[0.0], 1.0, &[0.0], &mut ws, 17).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 17, .. }));
    }

    #[test]
    fn diagonal_fast_path_matches_general_path() {
        let general = Linear {
            dim: 3,
            drift_coef: -0.7,
            vol: 0.4,
        };
        let diagonal = DiagonalLinear(Linear {
            dim: 3,
            drift_coef: -0.7,
            vol: 0.4,
        });
        let grid = TimeGrid::standard();
        let path = sample_brownian_path(&grid, 3, &mut stream(6, &[]));
        let control = ConstControl(vec![0.3, -0.2, 1.1]);
        let a = simulate_controlled_pair(
            &[0.1, 0.2, 0.3],
            0.0,
            &[],
            &general,
            &control,
            ValueIntegrand::NegatedControl,
            &grid,
            &path,
            false,
        )
        .unwrap();
        let b = simulate_controlled_pair(
            &[0.1, 0.2, 0.3],
            0.0,
            &[],
            &diagonal,
            &control,
            ValueIntegrand::NegatedControl,
            &grid,
            &path,
            false,
        )
        .unwrap();
        assert_eq!(a.x_terminal, b.x_terminal);
        assert_eq!(a.v_terminal, b.v_terminal);
    }

    #[test]
    fn value_step_examples() {
        assert_eq!(value_step(1.5, &[0.0, 0.0], &[3.0, 4.0], 0.02, &[0.1, 0.2]), 1.5);
        let v = value_step(0.0, &[2.0], &[0.0], 0.02, &[0.1]);
        assert!((v - 0.24).abs() < 1e-15);
        // iterative scheme: c = -z
        let z = [0.5, -1.5];
        let db = [0.03, -0.07];
        let v = value_step(2.0, &z, &[-0.5, 1.5], 0.02, &db);
        let expected = 2.0 - 0.5 * (0.25 + 2.25) * 0.02 + (0.5 * 0.03 + 1.5 * 0.07);
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn uncontrolled_pair_keeps_value_constant() {
        let model = ou(2);
        let grid = TimeGrid::standard();
        let path = sample_brownian_path(&grid, 2, &mut stream(7, &[]));
        let zero = ZeroControl { dim: 2 };
        let out = simulate_controlled_pair(
            &[0.5, -0.5],
            3.25,
            &[],
            &model,
            &zero,
            ValueIntegrand::Function(&zero),
            &grid,
            &path,
            true,
        )
        .unwrap();
        assert_eq!(out.v_terminal, 3.25);
        // plain Euler path
        let mut x = vec![0.5, -0.5];
        let mut ws = EulerWorkspace::new(2);
        for m in 0..grid.n_steps() {
            euler_update(&model, &mut x, &[0.0, 0.0], grid.step(), path.increment(m), &mut ws, m).unwrap();
        }
        assert_eq!(out.x_terminal, x);
        assert_eq!(out.trajectory.unwrap().len(), grid.n_steps() + 1);
    }

    #[test]
    fn single_step_grid_is_one_euler_and_one_value_step() {
        let model = ou(1);
        let grid = TimeGrid::new(0.5, 0.5).unwrap();
        let path = BrownianPath::from_increments(1, 0.5, vec![0.3]).unwrap();
        let control = ConstControl(vec![0.4]);
        let zfun = ConstControl(vec![-1.2]);
        let out = simulate_controlled_pair(
            &[1.0],
            0.7,
            &[],
            &model,
            &control,
            ValueIntegrand::Function(&zfun),
            &grid,
            &path,
            false,
        )
        .unwrap();
        let x1 = euler_step(&[1.0], &model, &control, &[], 0.0, 0.5, &[0.3], 0).unwrap();
        let v1 = value_step(0.7, &[-1.2], &[0.4], 0.5, &[0.3]);
        assert_eq!(out.x_terminal, x1);
        assert_eq!(out.v_terminal, v1);
    }

    #[test]
    fn state_and_value_consume_the_same_increments() {
        // With μ = 0, σ = I, c = 0 and Z = e₁ the state records Σ δB and the
        // value records ½T + Σ δB₁; equality pins down the shared noise.
        let model = Linear {
            dim: 2,
            drift_coef: 0.0,
            vol: 1.0,
        };
        let grid = TimeGrid::standard();
        let path = sample_brownian_path(&grid, 2, &mut stream(8, &[]));
        let zero = ZeroControl { dim: 2 };
        let unit = ConstControl(vec![1.0, 0.0]);
        let out = simulate_controlled_pair(
            &[0.0, 0.0],
            0.0,
            &[],
            &model,
            &zero,
            ValueIntegrand::Function(&unit),
            &grid,
            &path,
            false,
        )
        .unwrap();
        assert!((out.v_terminal - (0.5 * grid.horizon() + out.x_terminal[0])).abs() < 1e-12);
        assert!((out.x_terminal[0] - path.terminal()[0]).abs() < 1e-12);
    }

    #[test]
    fn euler_bias_on_ou_shrinks_linearly_with_step() {
        // Antithetic pairs cancel the noise exactly for the linear drift,
        // leaving the discretisation bias of E[X_T].
        let model = ou(1);
        let fine_grid = TimeGrid::new(1.0, 0.01).unwrap();
        let coarse_grid = TimeGrid::standard();
        let zero = ZeroControl { dim: 1 };
        let mut rng = stream(9, &[]);
        let mut fine_sum = 0.0;
        let mut coarse_sum = 0.0;
        let n_pairs = 2_000;
        for _ in 0..n_pairs {
            let fine = sample_brownian_path(&fine_grid, 1, &mut rng);
            let anti = BrownianPath::from_increments(1, fine.step(), fine.increments().iter().map(|v| -v).collect())
                .unwrap();
            for p in [&fine, &anti] {
                let run = |grid: &TimeGrid, path: &BrownianPath| {
                    simulate_controlled_pair(
                        &[1.0],
                        0.0,
                        &[],
                        &model,
                        &zero,
                        ValueIntegrand::NegatedControl,
                        grid,
                        path,
                        false,
                    )
                    .unwrap()
                    .x_terminal[0]
                };
                fine_sum += run(&fine_grid, p);
                coarse_sum += run(&coarse_grid, &p.coarsen(2).unwrap());
            }
        }
        let exact = (-1.0f64).exp();
        let n = 2.0 * n_pairs as f64;
        let fine_bias = fine_sum / n - exact;
        let coarse_bias = coarse_sum / n - exact;
        let ratio = coarse_bias / fine_bias;
        assert!((ratio - 2.0).abs() < 0.1, "bias ratio {ratio}");
    }
}
