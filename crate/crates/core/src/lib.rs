//! Learned Doob h-transform controls for particle filtering of discretely
//! observed diffusions.
//!
//! A pair of networks `(N₀, N)` is trained so that the value process driven
//! by `N` reproduces `−log g` at the next observation time ([`train`]). The
//! trained control then moves particles in an auxiliary particle filter
//! ([`filters`]), whose weights come from the same value recursion. The
//! Ornstein–Uhlenbeck model has closed forms for everything ([`oracle`]),
//! which serve as ground truth.

pub mod error;
pub mod filters;
pub mod models;
pub mod neural;
pub mod oracle;
pub mod rng;
pub mod sde;
pub mod train;

#[cfg(test)]
mod testing;

pub use error::{Error, Result};
