use crate::error::{Error, Result};
use crate::models::IsotropicGaussian;
use crate::sde::DiffusionModel;

/// `dX = -X dt + dB` on ℝᵈ.
#[derive(Debug, Clone, Copy)]
pub struct OrnsteinUhlenbeck {
    dim: usize,
}

impl OrnsteinUhlenbeck {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("OU dimension must be at least 1".into()));
        }
        Ok(Self { dim })
    }
}

impl DiffusionModel for OrnsteinUhlenbeck {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().zip(x).for_each(|(o, xi)| *o = -xi);
    }

    fn volatility(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.dim {
            out[i * self.dim + i] = 1.0;
        }
    }

    fn diagonal_volatility(&self, _x: &[f64], out: &mut [f64]) -> bool {
        out.fill(1.0);
        true
    }
}

/// The OU model and its stationary law `N(0, I/2)`.
pub fn ou_model(dim: usize) -> Result<(OrnsteinUhlenbeck, IsotropicGaussian)> {
    Ok((OrnsteinUhlenbeck::new(dim)?, IsotropicGaussian::centered(dim, 0.5)?))
}
