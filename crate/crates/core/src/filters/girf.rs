//! Guided intermediate resampling.
//!
//! Between observations the particles move with the uncontrolled Euler
//! dynamics over `P` sub-intervals. Each sub-interval ends with weights
//! from a guiding potential `φ_p` and a resampling sweep:
//!
//! ```text
//! log G₀(x) = φ₀(x),   log G_p(x_{p−1}, x_p) = φ_p(x_p) − φ_{p−1}(x_{p−1}),   φ_P = log g
//! ```
//!
//! so the guiding factors of one interval telescope to `g(x_P, y)`. Annealed
//! guiding uses `φ_p = λ_p log g`; optimal guiding uses `φ_p = log h(·, y, s_p)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::steps::{particle_path, propagate_uncontrolled, weight_and_resample, StepContext, StepDiagnostics};
use crate::filters::{ParticleEnsemble, Resampling};
use crate::models::Scenario;
use crate::oracle::OuClosedForm;
use crate::rng::tag;
use crate::sde::{EulerWorkspace, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GirfSchedule {
    /// `λ_p = p/P`.
    Linear,
    /// `λ_p = (p/P)²`.
    Quadratic,
    /// Explicit `λ₀, …, λ_P`.
    Custom(Vec<f64>),
    /// `φ_p = log h(·, y, s_p)`; needs the OU closed form.
    Optimal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GirfConfig {
    /// Number of sub-intervals `P`; must divide the number of Euler steps.
    pub intermediate_steps: usize,
    pub schedule: GirfSchedule,
}

impl GirfConfig {
    /// One sub-interval per Euler step.
    pub fn on_grid(grid: &TimeGrid, schedule: GirfSchedule) -> Self {
        Self {
            intermediate_steps: grid.n_steps(),
            schedule,
        }
    }

    /// `λ₀, …, λ_P` for annealed schedules.
    pub fn lambdas(&self) -> Option<Vec<f64>> {
        let p = self.intermediate_steps as f64;
        match &self.schedule {
            GirfSchedule::Linear => Some((0..=self.intermediate_steps).map(|i| i as f64 / p).collect()),
            GirfSchedule::Quadratic => Some((0..=self.intermediate_steps).map(|i| (i as f64 / p).powi(2)).collect()),
            GirfSchedule::Custom(l) => Some(l.clone()),
            GirfSchedule::Optimal => None,
        }
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        let p = self.intermediate_steps;
        if p == 0 || !grid.n_steps().is_multiple_of(p) {
            return Err(Error::InvalidParameter(format!(
                "GIRF needs P dividing the {} Euler steps, got P = {p}",
                grid.n_steps()
            )));
        }
        if let Some(l) = self.lambdas() {
            crate::sde::check_dim("GIRF schedule length", p + 1, l.len())?;
            if l.windows(2).any(|w| w[1] < w[0]) || l[p] != 1.0 || l[0] < 0.0 {
                return Err(Error::InvalidParameter(
                    "GIRF schedule must be non-decreasing from λ₀ ≥ 0 to λ_P = 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// `φ_p(x, y)` after `p` of the `P` sub-intervals.
    pub fn log_potential(&self, scenario: &Scenario, grid: &TimeGrid, x: &[f64], y: &[f64], p: usize) -> Result<f64> {
        if p > self.intermediate_steps {
            return Err(Error::InvalidParameter(format!(
                "sub-interval {p} is past P = {}",
                self.intermediate_steps
            )));
        }
        let ctx = StepContext {
            scenario,
            grid,
            resampling: Resampling::default(),
            seed: 0,
            index: 0,
        };
        resolve(self, &ctx)?.eval(&ctx, x, y, p, self.intermediate_steps)
    }
}

/// Guiding potentials resolved against a scenario.
enum Potential<'a> {
    Annealed(Vec<f64>),
    Optimal(&'a OuClosedForm),
}

/// GIRF filter state: the ensemble plus each particle's current potential
/// `φ_{p}(x_p)`, carried through resampling.
#[derive(Debug, Clone)]
pub struct GirfState {
    pub ensemble: ParticleEnsemble,
    potentials: Vec<f64>,
}

impl GirfState {
    pub fn potentials(&self) -> &[f64] {
        &self.potentials
    }
}

fn resolve<'a>(config: &GirfConfig, ctx: &StepContext<'a>) -> Result<Potential<'a>> {
    config.validate(ctx.grid)?;
    match config.lambdas() {
        Some(l) => Ok(Potential::Annealed(l)),
        None => {
            let oracle = ctx.scenario.oracle()?;
            if (oracle.horizon() - ctx.grid.horizon()).abs() > 1e-12 {
                return Err(Error::InvalidParameter("oracle and grid horizons differ".into()));
            }
            Ok(Potential::Optimal(oracle))
        }
    }
}

impl Potential<'_> {
    fn eval(&self, ctx: &StepContext<'_>, x: &[f64], y: &[f64], p: usize, total: usize) -> Result<f64> {
        match self {
            Potential::Annealed(l) => {
                // 0 · log g would be NaN where g vanishes.
                if l[p] == 0.0 {
                    Ok(0.0)
                } else {
                    Ok(l[p] * ctx.scenario.observation.log_likelihood(x, y))
                }
            }
            Potential::Optimal(oracle) => {
                let t = if p == total {
                    oracle.horizon()
                } else {
                    ctx.grid.horizon() * p as f64 / total as f64
                };
                oracle.log_h(x, y, t)
            }
        }
    }
}

/// Weight the initial particles by `G₀(x, y₁)` and resample. `ctx.index`
/// should be 0.
pub fn girf_initialize(
    ensemble: ParticleEnsemble,
    ctx: &StepContext<'_>,
    first_y: Option<&[f64]>,
    config: &GirfConfig,
) -> Result<GirfState> {
    let mut state = GirfState {
        potentials: vec![0.0; ensemble.len()],
        ensemble,
    };
    let Some(y) = first_y else {
        return Ok(state);
    };
    let potential = resolve(config, ctx)?;
    let p_total = config.intermediate_steps;
    state.potentials = state
        .ensemble
        .states()
        .par_iter()
        .map(|x| potential.eval(ctx, x, y, 0, p_total))
        .collect::<Result<_>>()?;
    let (_, ancestors) = weight_and_resample(
        &mut state.ensemble,
        &state.potentials.clone(),
        ctx.resampling,
        &[tag::RESAMPLE, ctx.index],
        ctx.seed,
    )?;
    if let Some(a) = ancestors {
        state.potentials = a.iter().map(|&i| state.potentials[i]).collect();
    }
    Ok(state)
}

/// Assimilate `y` over `P` guided sub-intervals. The last sweep also
/// multiplies in `G₀(x̂, y_next)` when a next observation exists.
pub fn girf_assimilate(
    state: &mut GirfState,
    ctx: &StepContext<'_>,
    y: &[f64],
    next_y: Option<&[f64]>,
    config: &GirfConfig,
) -> Result<StepDiagnostics> {
    let potential = resolve(config, ctx)?;
    let p_total = config.intermediate_steps;
    let per = ctx.grid.n_steps() / p_total;
    let dt = ctx.grid.step();
    let m = state.ensemble.len();
    let paths: Vec<_> = (0..m).into_par_iter().map(|j| particle_path(ctx, j)).collect();
    let mut final_diagnostics = None;

    for p in 1..=p_total {
        let last = p == p_total;
        let pots = &state.potentials;
        let results: Vec<(f64, f64)> = state
            .ensemble
            .states_mut()
            .par_iter_mut()
            .enumerate()
            .map(|(j, x)| {
                let mut ws = EulerWorkspace::new(x.len());
                propagate_uncontrolled(ctx.scenario, x, &paths[j], (p - 1) * per..p * per, dt, &mut ws)
                    .map_err(|e| e.on_path(j))?;
                let phi = potential.eval(ctx, x, y, p, p_total)?;
                let mut inc = phi - pots[j];
                let mut carried = phi;
                if let (true, Some(next)) = (last, next_y) {
                    carried = potential.eval(ctx, x, next, 0, p_total)?;
                    inc += carried;
                }
                Ok((inc, carried))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.at_intermediate(p))?;
        let increments: Vec<f64> = results.iter().map(|r| r.0).collect();
        state.potentials = results.iter().map(|r| r.1).collect();
        let label: Vec<u64> = if last {
            vec![tag::RESAMPLE, ctx.index]
        } else {
            vec![tag::RESAMPLE, ctx.index, p as u64]
        };
        let (diagnostics, ancestors) = weight_and_resample(&mut state.ensemble, &increments, ctx.resampling, &label, ctx.seed)
            .map_err(|e| e.at_intermediate(p))?;
        if let Some(a) = ancestors {
            state.potentials = a.iter().map(|&i| state.potentials[i]).collect();
        }
        if last {
            final_diagnostics = Some(diagnostics);
        }
    }
    Ok(final_diagnostics.expect("P >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn schedules_validate() {
        let grid = TimeGrid::standard();
        assert!(GirfConfig::on_grid(&grid, GirfSchedule::Linear).validate(&grid).is_ok());
        let bad_p = GirfConfig {
            intermediate_steps: 7,
            schedule: GirfSchedule::Linear,
        };
        assert!(bad_p.validate(&grid).is_err());
        let decreasing = GirfConfig {
            intermediate_steps: 2,
            schedule: GirfSchedule::Custom(vec![0.5, 0.2, 1.0]),
        };
        assert!(decreasing.validate(&grid).is_err());
        let short = GirfConfig {
            intermediate_steps: 2,
            schedule: GirfSchedule::Custom(vec![0.0, 1.0]),
        };
        assert!(short.validate(&grid).is_err());
        let q = GirfConfig::on_grid(&grid, GirfSchedule::Quadratic).lambdas().unwrap();
        assert_eq!(q[0], 0.0);
        assert_eq!(q[50], 1.0);
        assert!((q[25] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn guiding_factors_telescope_to_likelihood() {
        let scenario = Scenario::ou(1, 0.5, 1.0).unwrap();
        let grid = TimeGrid::standard();
        let ctx = StepContext {
            scenario: &scenario,
            grid: &grid,
            resampling: Resampling::Multinomial,
            seed: 1,
            index: 1,
        };
        let mut rng = stream(2, &[]);
        for schedule in [GirfSchedule::Linear, GirfSchedule::Quadratic, GirfSchedule::Optimal] {
            let config = GirfConfig::on_grid(&grid, schedule.clone());
            let potential = resolve(&config, &ctx).unwrap();
            for _ in 0..20 {
                let y = scenario.training.eta_y.sample(&mut rng);
                let path: Vec<Vec<f64>> = (0..=50).map(|_| scenario.training.eta_x.sample(&mut rng)).collect();
                let mut total = potential.eval(&ctx, &path[0], &y, 0, 50).unwrap();
                for p in 1..=50 {
                    total += potential.eval(&ctx, &path[p], &y, p, 50).unwrap()
                        - potential.eval(&ctx, &path[p - 1], &y, p - 1, 50).unwrap();
                }
                let log_g = scenario.observation.log_likelihood(&path[50], &y);
                assert!((total - log_g).abs() < 1e-10, "{schedule:?}: {total} vs {log_g}");
            }
        }
    }
}
