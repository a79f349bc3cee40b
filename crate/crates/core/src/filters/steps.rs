//! One assimilation step per filter: propagate, weight, resample.

use rayon::prelude::*;

use crate::error::Result;
use crate::filters::{GuideControl, Guide, ParticleEnsemble, Resampling};
use crate::models::Scenario;
use crate::oracle::{KalmanMode, OuClosedForm};
use crate::rng::{stream, tag};
use crate::sde::{
    euler_update, sample_brownian_path, simulate_controlled_pair, BrownianPath, EulerWorkspace, TimeGrid,
    ValueIntegrand,
};

/// Everything a step needs besides the ensemble and observation.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub scenario: &'a Scenario,
    pub grid: &'a TimeGrid,
    pub resampling: Resampling,
    /// Per-run seed.
    pub seed: u64,
    /// Observation index `k ≥ 1` of the step being assimilated.
    pub index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// ESS of the observation-time weights, before resampling.
    pub ess: f64,
    pub log_increment: f64,
}

/// Brownian path of particle slot `j` over the current interval. Every
/// filter driven by the same run seed sees the same noise in each slot.
pub fn particle_path(ctx: &StepContext<'_>, j: usize) -> BrownianPath {
    let mut rng = stream(ctx.seed, &[tag::PROPAGATE, ctx.index, j as u64]);
    sample_brownian_path(ctx.grid, ctx.scenario.state_dim(), &mut rng)
}

/// Advance `x` along grid steps `steps` of `path` with the uncontrolled
/// dynamics.
pub(crate) fn propagate_uncontrolled(
    scenario: &Scenario,
    x: &mut [f64],
    path: &BrownianPath,
    steps: std::ops::Range<usize>,
    dt: f64,
    ws: &mut EulerWorkspace,
) -> Result<()> {
    let zero = vec![0.0; x.len()];
    for m in steps {
        euler_update(scenario.diffusion.as_ref(), x, &zero, dt, path.increment(m), ws, m)?;
    }
    Ok(())
}

/// Weight, record diagnostics and resample. Uniform increments leave the
/// population untouched.
pub(crate) fn weight_and_resample(
    ensemble: &mut ParticleEnsemble,
    increments: &[f64],
    resampling: Resampling,
    resample_stream: &[u64],
    seed: u64,
) -> Result<(StepDiagnostics, Option<Vec<usize>>)> {
    let r = ensemble.reweight(increments)?;
    let diagnostics = StepDiagnostics {
        ess: ensemble.ess()?,
        log_increment: r.log_increment,
    };
    let ancestors = if r.uniform {
        None
    } else {
        Some(ensemble.resample(resampling, &mut stream(seed, resample_stream)))
    };
    Ok((diagnostics, ancestors))
}

fn finish(ensemble: &mut ParticleEnsemble, increments: &[f64], ctx: &StepContext<'_>) -> Result<StepDiagnostics> {
    weight_and_resample(ensemble, increments, ctx.resampling, &[tag::RESAMPLE, ctx.index], ctx.seed).map(|(d, _)| d)
}

/// Bootstrap step: uncontrolled propagation, weights `g(x̂, y)`.
pub fn bpf_step(ensemble: &mut ParticleEnsemble, ctx: &StepContext<'_>, y: &[f64]) -> Result<StepDiagnostics> {
    let n = ctx.grid.n_steps();
    let dt = ctx.grid.step();
    let obs = ctx.scenario.observation.as_ref();
    let increments: Vec<f64> = ensemble
        .states_mut()
        .par_iter_mut()
        .enumerate()
        .map(|(j, x)| {
            let path = particle_path(ctx, j);
            let mut ws = EulerWorkspace::new(x.len());
            propagate_uncontrolled(ctx.scenario, x, &path, 0..n, dt, &mut ws).map_err(|e| e.on_path(j))?;
            Ok(obs.log_likelihood(x, y))
        })
        .collect::<Result<_>>()?;
    finish(ensemble, &increments, ctx)
}

/// Auxiliary step with control `ĉ` and initial value `V̂₀` from `guide`:
/// `log W = V_T + log g(x̂, y) − V̂₀(x, y)` with `dV = −½‖Z‖²dt + ⟨Z, dB⟩`,
/// `Z = −ĉ`.
pub fn apf_step(
    ensemble: &mut ParticleEnsemble,
    ctx: &StepContext<'_>,
    y: &[f64],
    guide: &dyn Guide,
) -> Result<StepDiagnostics> {
    let control = GuideControl(guide);
    let obs = ctx.scenario.observation.as_ref();
    let increments: Vec<f64> = ensemble
        .states_mut()
        .par_iter_mut()
        .enumerate()
        .map(|(j, x)| {
            let path = particle_path(ctx, j);
            let v0 = guide.initial_value(x, y);
            let out = simulate_controlled_pair(
                x,
                v0,
                y,
                ctx.scenario.diffusion.as_ref(),
                &control,
                ValueIntegrand::NegatedControl,
                ctx.grid,
                &path,
                false,
            )
            .map_err(|e| e.on_path(j))?;
            let w = out.v_terminal + obs.log_likelihood(&out.x_terminal, y) - v0;
            x.copy_from_slice(&out.x_terminal);
            Ok(w)
        })
        .collect::<Result<_>>()?;
    finish(ensemble, &increments, ctx)
}

/// Fully adapted step for the OU model: weights `p(y | x)` and exact draws
/// from the conditioned transition, either of the diffusion itself or of
/// its Euler chain.
pub fn fa_apf_step_ou(
    ensemble: &mut ParticleEnsemble,
    ctx: &StepContext<'_>,
    y: &[f64],
    oracle: &OuClosedForm,
    mode: KalmanMode,
) -> Result<StepDiagnostics> {
    let transition = oracle.transition(mode)?;
    let increments: Vec<f64> = ensemble
        .states_mut()
        .par_iter_mut()
        .enumerate()
        .map(|(j, x)| {
            let mut rng = stream(ctx.seed, &[tag::PROPAGATE, ctx.index, j as u64]);
            let (w, next) = oracle.fully_adapted_draw(x, y, transition, &mut rng);
            *x = next;
            w
        })
        .collect();
    finish(ensemble, &increments, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::ParticleEnsemble;
    use crate::models::{GaussianObservation, ObservationModel};
    use std::sync::Arc;

    struct ZeroGuide(usize);

    impl Guide for ZeroGuide {
        fn dim(&self) -> usize {
            self.0
        }
        fn initial_value(&self, _: &[f64], _: &[f64]) -> f64 {
            0.0
        }
        fn control(&self, _: &[f64], _: &[f64], _: f64, out: &mut [f64]) {
            out.fill(0.0)
        }
    }

    fn ensemble(scenario: &Scenario, m: usize, seed: u64) -> ParticleEnsemble {
        let states = (0..m)
            .map(|j| scenario.initial.sample(&mut stream(seed, &[tag::INIT, j as u64])))
            .collect();
        ParticleEnsemble::new(states).unwrap()
    }

    #[test]
    fn zero_guide_reduces_to_bootstrap() {
        let scenario = Scenario::ou(1, 0.5, 1.0).unwrap();
        let grid = TimeGrid::standard();
        let ctx = StepContext {
            scenario: &scenario,
            grid: &grid,
            resampling: Resampling::Multinomial,
            seed: 5,
            index: 1,
        };
        let mut a = ensemble(&scenario, 64, 5);
        let mut b = a.clone();
        let da = bpf_step(&mut a, &ctx, &[0.7]).unwrap();
        let db = apf_step(&mut b, &ctx, &[0.7], &ZeroGuide(1)).unwrap();
        assert_eq!(da, db);
        assert_eq!(a, b);
    }

    struct FlatLikelihood;

    impl ObservationModel for FlatLikelihood {
        fn state_dim(&self) -> usize {
            1
        }
        fn obs_dim(&self) -> usize {
            1
        }
        fn log_likelihood(&self, _: &[f64], _: &[f64]) -> f64 {
            -0.3
        }
        fn grad_log_likelihood(&self, _: &[f64], _: &[f64], out: &mut [f64]) {
            out.fill(0.0)
        }
        fn sample(&self, _: &[f64], _: &mut dyn rand::RngCore) -> Vec<f64> {
            vec![0.0]
        }
        fn validate(&self, _: &[f64]) -> Result<()> {
            Ok(())
        }
        fn describe(&self) -> String {
            "flat".into()
        }
    }

    #[test]
    fn constant_likelihood_keeps_uniform_weights() {
        let scenario = Scenario::ou(1, 0.5, 1.0).unwrap().with_observation(Arc::new(FlatLikelihood)).unwrap();
        let grid = TimeGrid::standard();
        let ctx = StepContext {
            scenario: &scenario,
            grid: &grid,
            resampling: Resampling::Multinomial,
            seed: 6,
            index: 1,
        };
        let mut e = ensemble(&scenario, 100, 6);
        let d = bpf_step(&mut e, &ctx, &[0.0]).unwrap();
        assert_eq!(d.ess, 100.0);
        assert_eq!(d.log_increment, -0.3);
    }

    #[test]
    fn bootstrap_degenerates_for_sharp_distant_observations() {
        let scenario = Scenario::ou(1, 0.125, 1.0).unwrap();
        let grid = TimeGrid::standard();
        let ctx = StepContext {
            scenario: &scenario,
            grid: &grid,
            resampling: Resampling::Multinomial,
            seed: 7,
            index: 1,
        };
        let mut e = ensemble(&scenario, 1000, 7);
        let d = bpf_step(&mut e, &ctx, &[3.0]).unwrap();
        assert!(d.ess < 100.0, "ESS {}", d.ess);
    }

    #[test]
    fn weight_matches_explicit_girsanov_sum() {
        let scenario = Scenario::ou(1, 0.5, 1.0).unwrap();
        let oracle = scenario.oracle().unwrap().clone();
        let grid = TimeGrid::standard();
        let ctx = StepContext {
            scenario: &scenario,
            grid: &grid,
            resampling: Resampling::Multinomial,
            seed: 8,
            index: 3,
        };
        let g = GaussianObservation::new(1, 0.5).unwrap();
        let y = [0.9];
        for j in 0..50 {
            let x0 = [-1.0 + 0.04 * j as f64];
            let path = particle_path(&ctx, j);
            let v0 = oracle.initial_value(&x0, &y);
            let out = simulate_controlled_pair(
                &x0,
                v0,
                &y,
                scenario.diffusion.as_ref(),
                &GuideControl(&oracle),
                ValueIntegrand::NegatedControl,
                &grid,
                &path,
                true,
            )
            .unwrap();
            let via_value = out.v_terminal + g.log_likelihood(&out.x_terminal, &y) - v0;
            let trajectory = out.trajectory.unwrap();
            let mut girsanov = 0.0;
            let mut c = [0.0];
            for m in 0..grid.n_steps() {
                oracle.control(&trajectory[m], &y, grid.time(m), &mut c);
                let z = -c[0];
                girsanov += -0.5 * z * z * grid.step() + z * path.increment(m)[0];
            }
            let explicit = girsanov + g.log_likelihood(&out.x_terminal, &y);
            assert!((via_value - explicit).abs() < 1e-10, "{via_value} vs {explicit}");
        }
    }

    #[test]
    fn exact_apf_bracket_shrinks_with_step() {
        let scenario = Scenario::ou(1, 0.5, 1.0).unwrap();
        let oracle = scenario.oracle().unwrap().clone();
        let rms = |step: f64| {
            let grid = TimeGrid::new(1.0, step).unwrap();
            let ctx = StepContext {
                scenario: &scenario,
                grid: &grid,
                resampling: Resampling::Multinomial,
                seed: 9,
                index: 1,
            };
            let n = 2000;
            let mut acc = 0.0;
            for j in 0..n {
                let x0 = scenario.initial.sample(&mut stream(9, &[j as u64]));
                let y = scenario.training.eta_y.sample(&mut stream(10, &[j as u64]));
                let v0 = oracle.initial_value(&x0, &y);
                let out = simulate_controlled_pair(
                    &x0,
                    v0,
                    &y,
                    scenario.diffusion.as_ref(),
                    &GuideControl(&oracle),
                    ValueIntegrand::NegatedControl,
                    &grid,
                    &particle_path(&ctx, j),
                    false,
                )
                .unwrap();
                let r = out.v_terminal + scenario.observation.log_likelihood(&out.x_terminal, &y);
                acc += r * r;
            }
            (acc / n as f64).sqrt()
        };
        let (coarse, fine) = (rms(0.02), rms(0.01));
        assert!(fine < coarse, "{fine} vs {coarse}");
        assert!((coarse / fine - 2.0).abs() < 0.6, "ratio {}", coarse / fine);
    }
}
