use crate::sde::DiffusionModel;

const THRESHOLD: f64 = 1.0 / 16.0;
const NOISE_VARIANCE: f64 = 0.1;

/// Undifferentiated starting state.
pub const CELL_INITIAL_STATE: [f64; 2] = [1.0, 1.0];

/// Two-gene expression model: Hill-type self-activation and mutual
/// inhibition (exponent 4, threshold 2⁻⁴), linear inactivation, and
/// volatility `√0.1 · I₂`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellDifferentiation;

fn hill(v: f64) -> f64 {
    let v4 = v * v * v * v;
    v4 / (THRESHOLD + v4)
}

fn inhibition(v: f64) -> f64 {
    let v4 = v * v * v * v;
    THRESHOLD / (THRESHOLD + v4)
}

impl DiffusionModel for CellDifferentiation {
    fn dim(&self) -> usize {
        2
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = hill(x[0]) + inhibition(x[1]) - x[0];
        out[1] = hill(x[1]) + inhibition(x[0]) - x[1];
    }

    fn volatility(&self, _x: &[f64], out: &mut [f64]) {
        let s = NOISE_VARIANCE.sqrt();
        out.copy_from_slice(&[s, 0.0, 0.0, s]);
    }

    fn diagonal_volatility(&self, _x: &[f64], out: &mut [f64]) -> bool {
        out.fill(NOISE_VARIANCE.sqrt());
        true
    }
}

/// The cell model and its Dirac initial state `(1, 1)`.
pub fn cell_model() -> (CellDifferentiation, [f64; 2]) {
    (CellDifferentiation, CELL_INITIAL_STATE)
}
