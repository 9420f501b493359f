//! Porous medium flow driven by a fractional potential pressure.
//!
//! The model is `∂ₜu = ∇·(u∇p)`, `p = (-Δ)^{-s}u`, on a periodic box in one
//! to three dimensions.

pub mod barriers;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod frac_ops;
pub mod grid;
pub mod io;
pub mod plot;
pub mod riesz_oracle;
pub mod selfsim;
pub mod solver;

pub use error::{Error, Result};
pub use frac_ops::{FracParams, SpectralPlan};
pub use grid::{Field, Grid};
