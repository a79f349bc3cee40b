//! Bootstrap, auxiliary (learned or exact control), fully adapted and
//! guided intermediate resampling particle filters.

mod ensemble;
mod girf;
mod run;
mod steps;

pub use ensemble::{ess, log_sum_exp, multinomial_indices, systematic_indices, ParticleEnsemble, Resampling, Reweight};
pub use girf::{girf_assimilate, girf_initialize, GirfConfig, GirfSchedule, GirfState};
pub use run::{run_filter, FilterKind, FilterOptions, RunRecord};
pub use steps::{apf_step, bpf_step, fa_apf_step_ou, particle_path, StepContext, StepDiagnostics};

use crate::sde::ControlFunction;

/// A control `ĉ(x, y, t)` for `t ∈ [0, T)` together with an approximation
/// `V̂₀(x, y)` of the initial value function `−log h(x, y, 0)`.
pub trait Guide: Sync {
    fn dim(&self) -> usize;
    fn initial_value(&self, x: &[f64], y: &[f64]) -> f64;
    fn control(&self, x: &[f64], y: &[f64], t: f64, out: &mut [f64]);
}

/// `ĉ` of a guide as a [`ControlFunction`].
pub(crate) struct GuideControl<'a>(pub &'a dyn Guide);

impl ControlFunction for GuideControl<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn evaluate(&self, x: &[f64], y: &[f64], t: f64, out: &mut [f64]) {
        self.0.control(x, y, t, out)
    }
}
