//! Uniform periodic grids standing in for ℝⁿ, cell-centered fields, and the
//! quadrature and norm primitives everything else is built on.
//!
//! The box is `[-X, X)ⁿ` split into `N` cells per axis. Cell `i` along an axis
//! has its center at `-X + (i + ½)h`, so the grid is symmetric under
//! `x → -x` (index `i → N-1-i`). Values are stored row-major with axis 0 the
//! slowest-varying index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Reductions below this length are summed sequentially.
const PAIRWISE_BLOCK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    cells_per_axis: usize,
    half_length: f64,
}

impl Grid {
    pub fn new(dim: usize, cells_per_axis: usize, half_length: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dim must be 1, 2 or 3, got {dim}")));
        }
        if cells_per_axis < 2 {
            return Err(Error::InvalidGrid(format!(
                "cells_per_axis must be at least 2, got {cells_per_axis}"
            )));
        }
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half_length must be positive and finite, got {half_length}"
            )));
        }
        cells_per_axis
            .checked_pow(dim as u32)
            .filter(|&n| n <= isize::MAX as usize / std::mem::size_of::<f64>())
            .ok_or_else(|| Error::InvalidGrid("total cell count overflows memory".into()))?;
        if !cells_per_axis.is_power_of_two() {
            log::warn!("cells_per_axis = {cells_per_axis} is not a power of two; transforms will be slower");
        }
        Ok(Self {
            dim,
            cells_per_axis,
            half_length,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    /// Cell width `h = 2X / N`.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / self.cells_per_axis as f64
    }

    /// `hⁿ`, the weight of one cell in every quadrature.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Total number of cells, `Nⁿ`.
    pub fn len(&self) -> usize {
        self.cells_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of the `i`-th cell center along any axis.
    pub fn center(&self, i: usize) -> f64 {
        -self.half_length + (i as f64 + 0.5) * self.spacing()
    }

    /// Per-axis indices of a flat index. Unused trailing axes are zero.
    pub fn unravel(&self, flat: usize) -> [usize; MAX_DIM] {
        let n = self.cells_per_axis;
        let mut idx = [0; MAX_DIM];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            idx[axis] = rest % n;
            rest /= n;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter()
            .take(self.dim)
            .fold(0, |acc, &i| acc * self.cells_per_axis + i)
    }

    /// Cell-center position of a flat index. Unused trailing components are zero.
    pub fn position(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.unravel(flat);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = self.center(idx[axis]);
        }
        x
    }

    /// Distance from the origin to the center of a cell.
    pub fn radius(&self, flat: usize) -> f64 {
        let x = self.position(flat);
        x.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Index of the cell whose center is closest to `point` along each axis,
    /// or `None` if the point lies outside the box.
    pub fn nearest_cell(&self, point: &[f64]) -> Option<usize> {
        if point.len() != self.dim {
            return None;
        }
        let h = self.spacing();
        let mut idx = [0usize; MAX_DIM];
        for (axis, &p) in point.iter().enumerate() {
            let i = ((p + self.half_length) / h - 0.5).round();
            if !(0.0..self.cells_per_axis as f64).contains(&i) {
                return None;
            }
            idx[axis] = i as usize;
        }
        Some(self.ravel(&idx))
    }

    /// Distance from a cell center to the nearest face of the box (sup-norm).
    pub fn distance_to_edge(&self, flat: usize) -> f64 {
        let x = self.position(flat);
        x[..self.dim]
            .iter()
            .map(|c| self.half_length - c.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// The same grid with a different box size and the same cell count.
    pub fn with_half_length(&self, half_length: f64) -> Result<Self> {
        Grid::new(self.dim, self.cells_per_axis, half_length)
    }
}

/// Cell-centered real values on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    /// Builds a field without the finiteness scan. Callers guarantee the length.
    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f` at every cell center. `f` receives a slice of length `dim`.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| f(&grid.position(i)[..grid.dim()]))
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise map into a new field on the same grid.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_vec_unchecked(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(Field::from_vec_unchecked(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn check_nonnegative(&self) -> Result<()> {
        match self.values.iter().position(|&v| v < 0.0) {
            Some(index) => Err(Error::NegativeDensity {
                index,
                value: self.values[index],
            }),
            None => Ok(()),
        }
    }
}

/// Deterministic pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of `f(i)` for `i` in `0..len`, without materializing a buffer
/// larger than one block.
pub fn pairwise_sum_by(len: usize, f: &impl Fn(usize) -> f64) -> f64 {
    fn rec(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
        if hi - lo <= PAIRWISE_BLOCK {
            return (lo..hi).map(f).sum();
        }
        let mid = lo + (hi - lo) / 2;
        rec(lo, mid, f) + rec(mid, hi, f)
    }
    rec(0, len, f)
}

/// Midpoint-rule integral `hⁿ Σ fᵢ`.
pub fn integrate(f: &Field) -> f64 {
    f.grid.cell_volume() * pairwise_sum(&f.values)
}

/// `∫ f·g` without allocating the product.
pub fn integrate_product(f: &Field, g: &Field) -> Result<f64> {
    if f.grid != g.grid {
        return Err(Error::GridMismatch);
    }
    let (a, b) = (&f.values, &g.values);
    Ok(f.grid.cell_volume() * pairwise_sum_by(a.len(), &|i| a[i] * b[i]))
}

/// Discrete `Lᵖ` norm; `p = f64::INFINITY` gives the max norm.
pub fn lp_norm(f: &Field, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::param("p", format!("Lp norm needs p >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(f.max_abs());
    }
    let v = &f.values;
    let sum = if p == 1.0 {
        pairwise_sum_by(v.len(), &|i| v[i].abs())
    } else if p == 2.0 {
        pairwise_sum_by(v.len(), &|i| v[i] * v[i])
    } else {
        pairwise_sum_by(v.len(), &|i| v[i].abs().powf(p))
    };
    Ok((f.grid.cell_volume() * sum).powf(1.0 / p))
}

/// Largest distance to the origin over cells where `f > threshold_fraction · max f`.
pub fn support_radius(f: &Field, threshold_fraction: f64) -> Result<f64> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(Error::param(
            "threshold_fraction",
            format!("must lie in (0, 1), got {threshold_fraction}"),
        ));
    }
    f.check_nonnegative()?;
    let max = f.max();
    if max <= 0.0 {
        return Ok(0.0);
    }
    let cut = threshold_fraction * max;
    Ok(f.values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > cut)
        .map(|(i, _)| f.grid.radius(i))
        .fold(0.0, f64::max))
}
