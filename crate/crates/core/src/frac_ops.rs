//! Fourier realization of the fractional potential operators on the periodic box.
//!
//! With angular wavenumbers `k = (π/X)·m`, `m ∈ [-N/2, N/2)`, the operators are
//! the multipliers
//!
//! | operator                     | symbol                  |
//! |------------------------------|-------------------------|
//! | `K = (-Δ)^{-s}`              | `|k|^{-2s}`             |
//! | `H = K^{1/2}`                | `|k|^{-s}`              |
//! | `∂ⱼK`                        | `i kⱼ |k|^{-2s}`        |
//! | `ΔK = -(-Δ)^{1-s}`           | `-|k|^{2-2s}`           |
//!
//! all multiplied by the mollifier transform `ρ̂(εk) = exp(-ε²|k|²/2)` (square
//! root of it for `H`) and set to zero at `k = 0`. On the torus the potential is
//! only defined up to a constant; the dynamics only sees its gradient.
//!
//! The forward transform is unnormalized and the inverse carries `1/Nⁿ`, so
//! Parseval reads `∫ f g dx = (hⁿ/Nⁿ) Σ_k f̂(k) conj(ĝ(k))`.
//!
//! Transforms run single-threaded, so results are bit-reproducible.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{pairwise_sum_by, Field, Grid, MAX_DIM};

/// Order `s` of the potential together with the spatial dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FracParams {
    s: f64,
    dim: usize,
}

impl FracParams {
    /// Requires `0 < s < 1` and `2s < n`, so that the Riesz kernel
    /// `|x|^{-(n-2s)}` is positive and locally integrable. In one dimension
    /// this means `s < 1/2`.
    pub fn new(s: f64, dim: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::param("dim", format!("must be 1, 2 or 3, got {dim}")));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::param("s", format!("must lie in (0, 1), got {s}")));
        }
        if 2.0 * s >= dim as f64 {
            return Err(Error::param(
                "s",
                format!(
                    "2s < n is required for a positive, locally integrable Riesz kernel; \
                     got s = {s} in dimension {dim}"
                ),
            ));
        }
        Ok(Self { s, dim })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Precomputed transforms and per-mode symbols for one grid and one order.
#[derive(Clone)]
pub struct SpectralPlan {
    grid: Grid,
    s: f64,
    eps_moll: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Angular wavenumber per transform index along one axis.
    k_axis: Vec<f64>,
    /// Same, with the Nyquist entry zeroed for odd (derivative) symbols.
    k_deriv: Vec<f64>,
    k_sq: Vec<f64>,
    sym_k: Vec<f64>,
    sym_h: Vec<f64>,
    sym_dk: Vec<f64>,
}

impl std::fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan")
            .field("grid", &self.grid)
            .field("s", &self.s)
            .field("eps_moll", &self.eps_moll)
            .finish()
    }
}

/// Mollifier transform `ρ̂(ξ) = exp(-|ξ|²/2)`, evaluated at `|ξ|² = xi_sq`.
pub fn mollifier_hat(xi_sq: f64) -> f64 {
    (-0.5 * xi_sq).exp()
}

impl SpectralPlan {
    pub fn new(grid: Grid, fp: &FracParams) -> Result<Self> {
        if fp.dim() != grid.dim() {
            return Err(Error::GridMismatch);
        }
        Ok(Self::with_order(grid, fp.s()))
    }

    /// Plan for an arbitrary order `s ∈ [0, 1)`. With `s = 0` the potential is
    /// the identity on mean-zero data, which is what the porous-medium limit uses.
    pub fn with_order(grid: Grid, s: f64) -> Self {
        assert!((0.0..1.0).contains(&s), "order must lie in [0, 1), got {s}");
        let n = grid.cells_per_axis();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let dk = std::f64::consts::PI / grid.half_length();
        let k_axis: Vec<f64> = (0..n)
            .map(|j| {
                let m = if j < n / 2 { j as isize } else { j as isize - n as isize };
                m as f64 * dk
            })
            .collect();
        let mut k_deriv = k_axis.clone();
        if n.is_multiple_of(2) {
            k_deriv[n / 2] = 0.0;
        }
        let k_sq: Vec<f64> = (0..grid.len())
            .map(|flat| {
                let idx = grid.unravel(flat);
                idx[..grid.dim()].iter().map(|&j| k_axis[j] * k_axis[j]).sum()
            })
            .collect();
        let mut plan = Self {
            grid,
            s,
            eps_moll: 0.0,
            fwd,
            inv,
            k_axis,
            k_deriv,
            k_sq,
            sym_k: Vec::new(),
            sym_h: Vec::new(),
            sym_dk: Vec::new(),
        };
        plan.build_symbols();
        plan
    }

    fn build_symbols(&mut self) {
        let (s, eps) = (self.s, self.eps_moll);
        let len = self.k_sq.len();
        self.sym_k = Vec::with_capacity(len);
        self.sym_h = Vec::with_capacity(len);
        self.sym_dk = Vec::with_capacity(len);
        for &k2 in &self.k_sq {
            if k2 == 0.0 {
                self.sym_k.push(0.0);
                self.sym_h.push(0.0);
                self.sym_dk.push(0.0);
                continue;
            }
            let moll = if eps > 0.0 { mollifier_hat(eps * eps * k2) } else { 1.0 };
            let k = k2.powf(-s) * moll;
            self.sym_k.push(k);
            self.sym_h.push(k.sqrt());
            self.sym_dk.push(-k2.powf(1.0 - s) * moll);
        }
    }

    /// Plan whose kernel is mollified at scale `eps_moll`; `0` gives the
    /// unmollified symbols back.
    pub fn mollified(&self, eps_moll: f64) -> Result<Self> {
        if !(eps_moll >= 0.0 && eps_moll.is_finite()) {
            return Err(Error::param(
                "eps_moll",
                format!("must be finite and >= 0, got {eps_moll}"),
            ));
        }
        let mut plan = self.clone();
        plan.eps_moll = eps_moll;
        plan.build_symbols();
        Ok(plan)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn eps_moll(&self) -> f64 {
        self.eps_moll
    }

    /// Per-mode symbol of `K` (including the mollifier), in transform order.
    pub fn k_symbol(&self) -> &[f64] {
        &self.sym_k
    }

    pub fn h_symbol(&self) -> &[f64] {
        &self.sym_h
    }

    pub fn laplacian_k_symbol(&self) -> &[f64] {
        &self.sym_dk
    }

    /// `|k|²` per mode.
    pub fn k_squared(&self) -> &[f64] {
        &self.k_sq
    }

    /// Angular wavenumber per transform index along one axis.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.k_axis
    }

    fn check(&self, u: &Field) -> Result<()> {
        if u.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    fn transform(&self, buf: &mut [Complex<f64>], inverse: bool) {
        let fft = if inverse { &self.inv } else { &self.fwd };
        let n = self.grid.cells_per_axis();
        let dim = self.grid.dim();
        let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        // Last axis is contiguous: every run of n values is one line.
        fft.process_with_scratch(buf, &mut scratch);
        if dim == 1 {
            return;
        }
        let mut line = vec![Complex::default(); n];
        for axis in 0..dim - 1 {
            let stride = n.pow((dim - 1 - axis) as u32);
            let block = stride * n;
            for base in (0..buf.len()).step_by(block) {
                for offset in 0..stride {
                    let start = base + offset;
                    for (j, c) in line.iter_mut().enumerate() {
                        *c = buf[start + j * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (j, c) in line.iter().enumerate() {
                        buf[start + j * stride] = *c;
                    }
                }
            }
        }
    }

    /// Unnormalized forward transform of a real field.
    pub fn forward(&self, u: &Field) -> Result<Vec<Complex<f64>>> {
        self.check(u)?;
        let mut buf: Vec<Complex<f64>> =
            u.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        Ok(buf)
    }

    /// Inverse transform (with the `1/Nⁿ` factor), keeping the real part.
    pub fn inverse_real(&self, mut spec: Vec<Complex<f64>>) -> Field {
        self.transform(&mut spec, true);
        let scale = 1.0 / self.grid.len() as f64;
        Field::from_vec_unchecked(self.grid, spec.iter().map(|c| c.re * scale).collect())
    }

    fn apply_real_symbol(&self, u: &Field, symbol: &[f64]) -> Result<Field> {
        let mut spec = self.forward(u)?;
        for (c, &m) in spec.iter_mut().zip(symbol) {
            *c *= m;
        }
        Ok(self.inverse_real(spec))
    }

    fn derivative_symbol(&self, flat: usize, axis: usize) -> f64 {
        self.k_deriv[self.grid.unravel(flat)[axis]]
    }

    /// Applies `i kⱼ · symbol(k)` for each axis `j` to an already transformed field.
    fn gradient_from_spectrum(&self, spec: &[Complex<f64>], symbol: Option<&[f64]>) -> Vec<Field> {
        (0..self.grid.dim())
            .map(|axis| {
                let comp: Vec<Complex<f64>> = spec
                    .iter()
                    .enumerate()
                    .map(|(flat, &c)| {
                        let m = symbol.map_or(1.0, |s| s[flat]);
                        let kj = self.derivative_symbol(flat, axis);
                        c * Complex::new(0.0, kj * m)
                    })
                    .collect();
                self.inverse_real(comp)
            })
            .collect()
    }

    /// Pressure `p = K u`, with `p̂(0) = 0`.
    pub fn riesz_potential(&self, u: &Field) -> Result<Field> {
        self.apply_real_symbol(u, &self.sym_k)
    }

    /// `H u = K^{1/2} u`.
    pub fn half_potential(&self, u: &Field) -> Result<Field> {
        self.apply_real_symbol(u, &self.sym_h)
    }

    /// `∇K u`, one field per axis.
    pub fn grad_potential(&self, u: &Field) -> Result<Vec<Field>> {
        let spec = self.forward(u)?;
        Ok(self.gradient_from_spectrum(&spec, Some(&self.sym_k)))
    }

    /// `∇H u`, one field per axis.
    pub fn grad_half_potential(&self, u: &Field) -> Result<Vec<Field>> {
        let spec = self.forward(u)?;
        Ok(self.gradient_from_spectrum(&spec, Some(&self.sym_h)))
    }

    /// Spectral gradient `∇u` (no potential).
    pub fn gradient(&self, u: &Field) -> Result<Vec<Field>> {
        let spec = self.forward(u)?;
        Ok(self.gradient_from_spectrum(&spec, None))
    }

    /// `ΔK u = -(-Δ)^{1-s} u`.
    pub fn neg_frac_laplacian_1ms(&self, u: &Field) -> Result<Field> {
        self.apply_real_symbol(u, &self.sym_dk)
    }

    /// Spectral Laplacian, multiplier `-|k|²`.
    pub fn laplacian(&self, u: &Field) -> Result<Field> {
        let sym: Vec<f64> = self.k_sq.iter().map(|k2| -k2).collect();
        self.apply_real_symbol(u, &sym)
    }

    /// `(hⁿ/Nⁿ) Σ_k w(k) |û(k)|²` for a per-mode weight `w`.
    pub fn spectral_form(&self, u: &Field, weight: impl Fn(usize) -> f64) -> Result<f64> {
        let spec = self.forward(u)?;
        let norm = self.grid.cell_volume() / self.grid.len() as f64;
        Ok(norm * pairwise_sum_by(spec.len(), &|i| weight(i) * spec[i].norm_sqr()))
    }

    /// `∫ |H u|²` computed in transform space.
    pub fn h_norm_sq(&self, u: &Field) -> Result<f64> {
        self.spectral_form(u, |i| self.sym_k[i])
    }

    /// `∫ |∇H u|² = Σ_k |k|² K(k) |û|²`, the first dissipation.
    pub fn grad_h_norm_sq(&self, u: &Field) -> Result<f64> {
        self.spectral_form(u, |i| self.k_sq[i] * self.sym_k[i])
    }
}
