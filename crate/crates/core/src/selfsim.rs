//! Mass-preserving self-similar solutions, used as initial data and as
//! reference profiles.
//!
//! Fractional pressure: `u = t^{-nβ} A (R² - |x|² t^{-2β})₊^{1-s}` with
//! `β = 1/(n+2-2s)`. The pressure of the profile is an inverted paraboloid on
//! its support because `(-Δ)^{σ}(1-|x|²)₊^{σ} = κ` there, with `σ = 1-s` and
//! `κ = 2^{2σ} Γ(1+σ) Γ(n/2+σ) / Γ(n/2)`; matching powers gives `A = nβ/κ`.
//!
//! Porous medium limit `u_t = ∇·(u∇u)`: `u = t^{-nβ} (C - β|x|² t^{-2β}/2)₊`
//! with `β = 1/(n+2)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// `∫_{|ξ|<R} (R² - |ξ|²)^σ dξ`.
fn ball_moment(dim: usize, sigma: f64, radius: f64) -> f64 {
    let n = dim as f64;
    radius.powf(2.0 * sigma + n) * std::f64::consts::PI.powf(n / 2.0) * gamma(sigma + 1.0)
        / gamma(sigma + 1.0 + n / 2.0)
}

/// Self-similar solution of the fractional-pressure equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionalBarenblatt {
    pub dim: usize,
    pub s: f64,
    pub mass: f64,
}

impl FractionalBarenblatt {
    pub fn new(dim: usize, s: f64, mass: f64) -> Result<Self> {
        crate::frac_ops::FracParams::new(s, dim)?;
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::param("mass", format!("must be positive, got {mass}")));
        }
        Ok(Self { dim, s, mass })
    }

    /// Spreading exponent `β = 1/(n+2-2s)`.
    pub fn beta(&self) -> f64 {
        1.0 / (self.dim as f64 + 2.0 - 2.0 * self.s)
    }

    pub fn kappa(&self) -> f64 {
        let sigma = 1.0 - self.s;
        let half_n = self.dim as f64 / 2.0;
        2f64.powf(2.0 * sigma) * gamma(1.0 + sigma) * gamma(half_n + sigma) / gamma(half_n)
    }

    pub fn amplitude(&self) -> f64 {
        self.dim as f64 * self.beta() / self.kappa()
    }

    /// Support radius of the profile at `t = 1`.
    pub fn profile_radius(&self) -> f64 {
        let sigma = 1.0 - self.s;
        let unit = self.amplitude() * ball_moment(self.dim, sigma, 1.0);
        (self.mass / unit).powf(1.0 / (2.0 * sigma + self.dim as f64))
    }

    /// Free-boundary radius at time `t`.
    pub fn front(&self, t: f64) -> f64 {
        self.profile_radius() * t.powf(self.beta())
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        let b = self.beta();
        let r2: f64 = x.iter().map(|c| c * c).sum::<f64>() * t.powf(-2.0 * b);
        let base = self.profile_radius().powi(2) - r2;
        if base <= 0.0 {
            return 0.0;
        }
        t.powf(-(self.dim as f64) * b) * self.amplitude() * base.powf(1.0 - self.s)
    }

    pub fn field(&self, grid: Grid, t: f64) -> Field {
        Field::from_fn(grid, |x| self.value(x, t))
    }
}

/// Self-similar solution of `u_t = ∇·(u∇u)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmeBarenblatt {
    pub dim: usize,
    pub mass: f64,
}

impl PmeBarenblatt {
    pub fn new(dim: usize, mass: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::param("dim", format!("must be 1, 2 or 3, got {dim}")));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::param("mass", format!("must be positive, got {mass}")));
        }
        Ok(Self { dim, mass })
    }

    pub fn beta(&self) -> f64 {
        1.0 / (self.dim as f64 + 2.0)
    }

    /// The constant `C` fixed by the mass.
    pub fn height(&self) -> f64 {
        // Profile C(1 - |ξ|²/ρ²) with ρ² = 2C/β; mass = C ρⁿ |B₁| · 2/(n+2).
        let n = self.dim as f64;
        let b = self.beta();
        let unit_ball = std::f64::consts::PI.powf(n / 2.0) / gamma(n / 2.0 + 1.0);
        let shape = unit_ball * 2.0 / (n + 2.0) * (2.0 / b).powf(n / 2.0);
        (self.mass / shape).powf(2.0 / (n + 2.0))
    }

    pub fn front(&self, t: f64) -> f64 {
        (2.0 * self.height() / self.beta()).sqrt() * t.powf(self.beta())
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        let b = self.beta();
        let r2: f64 = x.iter().map(|c| c * c).sum::<f64>() * t.powf(-2.0 * b);
        let base = self.height() - 0.5 * b * r2;
        if base <= 0.0 {
            return 0.0;
        }
        t.powf(-(self.dim as f64) * b) * base
    }

    pub fn field(&self, grid: Grid, t: f64) -> Field {
        Field::from_fn(grid, |x| self.value(x, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate;
    use approx::assert_relative_eq;

    #[test]
    fn fractional_profile_constants_in_one_dimension() {
        let b = FractionalBarenblatt::new(1, 0.25, 1.0).unwrap();
        assert_relative_eq!(b.beta(), 0.4, max_relative = 1e-15);
        assert_relative_eq!(b.kappa(), 1.3293403881791355, max_relative = 1e-8);
        assert!((b.profile_radius() - 1.398).abs() < 1e-3);
    }

    #[test]
    fn profiles_carry_their_mass() {
        for dim in 1..=2 {
            let grid = Grid::new(dim, if dim == 1 { 4096 } else { 512 }, 4.0).unwrap();
            let f = FractionalBarenblatt::new(dim, 0.3, 1.5).unwrap();
            assert_relative_eq!(integrate(&f.field(grid, 0.7)), 1.5, max_relative = 2e-3);
            let p = PmeBarenblatt::new(dim, 0.8).unwrap();
            assert_relative_eq!(integrate(&p.field(grid, 0.5)), 0.8, max_relative = 2e-3);
        }
    }

    #[test]
    fn fronts_follow_the_profiles() {
        let f = FractionalBarenblatt::new(1, 0.25, 1.0).unwrap();
        let r = f.front(2.0);
        assert!(f.value(&[r * 0.999], 2.0) > 0.0);
        assert_eq!(f.value(&[r * 1.001], 2.0), 0.0);
        let p = PmeBarenblatt::new(2, 1.0).unwrap();
        let r = p.front(3.0);
        assert!(p.value(&[r * 0.999, 0.0], 3.0) > 0.0);
        assert_eq!(p.value(&[0.0, r * 1.001], 3.0), 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(FractionalBarenblatt::new(1, 0.6, 1.0).is_err());
        assert!(FractionalBarenblatt::new(1, 0.2, 0.0).is_err());
        assert!(PmeBarenblatt::new(4, 1.0).is_err());
    }
}
