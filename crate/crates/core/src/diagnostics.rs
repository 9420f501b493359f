//! Conserved and dissipated functionals along a trajectory, energy-identity
//! residuals, and power-law fits of the free boundary.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frac_ops::SpectralPlan;
use crate::grid::{integrate, lp_norm, pairwise_sum_by, support_radius, Field};
use crate::solver::{RegParams, State};

/// Fixed CSV column order.
pub const CSV_COLUMNS: [&str; 11] = [
    "t",
    "mass",
    "linf",
    "l1",
    "l2",
    "entropy",
    "entropy_mu",
    "h_energy",
    "diss_first",
    "diss_second",
    "support_radius",
];

/// Cells below this value contribute nothing to entropy integrals.
const ENTROPY_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsOptions {
    /// Exponents of the recorded `Lᵖ` norms; 1 and 2 are always included.
    pub p_list: Vec<f64>,
    /// Relative level defining the support.
    pub support_threshold: f64,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            p_list: vec![1.0, 2.0],
            support_threshold: 1e-6,
        }
    }
}

/// Functionals of one snapshot.
///
/// * `entropy = ∫ u log u` (with `0 log 0 = 0`),
/// * `entropy_mu = ∫ F_μ(u)`, `F_μ(u) = (u+μ) log(1+u/μ) - u`; equal to
///   `entropy` when `μ = 0` (the two differ by multiples of the conserved mass),
/// * `h_energy = ½ ∫ |H u|²`, `diss_first = ∫ |∇H u|²` (Parseval),
/// * `diss_second = ∫ (u+μ) |∇K u|²` in physical space,
/// * `diss_visc = δ ∫ ∇u·∇(F_μ'(u))`, the viscous entropy dissipation.
///
/// All operators carry the kernel mollification of the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub linf: f64,
    pub lp: BTreeMap<String, f64>,
    pub entropy: f64,
    pub entropy_mu: f64,
    pub h_energy: f64,
    pub diss_first: f64,
    pub diss_second: f64,
    #[serde(default)]
    pub diss_visc: f64,
    pub support_radius: f64,
}

fn p_key(p: f64) -> String {
    format!("{p}")
}

impl DiagnosticsRecord {
    /// Recorded `Lᵖ` norm, if `p` was in the list.
    pub fn lp(&self, p: f64) -> Option<f64> {
        self.lp.get(&p_key(p)).copied()
    }

    pub fn l1(&self) -> f64 {
        self.lp(1.0).unwrap_or(f64::NAN)
    }

    pub fn l2(&self) -> f64 {
        self.lp(2.0).unwrap_or(f64::NAN)
    }

    fn csv_row(&self) -> [f64; 11] {
        [
            self.t,
            self.mass,
            self.linf,
            self.l1(),
            self.l2(),
            self.entropy,
            self.entropy_mu,
            self.h_energy,
            self.diss_first,
            self.diss_second,
            self.support_radius,
        ]
    }
}

fn entropy_density(u: f64) -> f64 {
    if u < ENTROPY_FLOOR {
        0.0
    } else {
        u * u.ln()
    }
}

/// `F_μ(u) = (u+μ) log(1+u/μ) - u`, so that `F'' = 1/(u+μ)` and `F(0) = F'(0) = 0`.
pub fn f_mu(u: f64, mu: f64) -> f64 {
    if mu > 0.0 {
        (u + mu) * (u / mu).ln_1p() - u
    } else {
        entropy_density(u)
    }
}

/// Discrete viscous dissipation `δ Σ_faces (u_j - u_i)(ln d_j - ln d_i)/h² · hⁿ`.
/// With `μ = 0`, faces touching an empty cell are skipped.
fn viscous_dissipation(u: &Field, reg: &RegParams) -> f64 {
    if reg.delta == 0.0 {
        return 0.0;
    }
    let grid = *u.grid();
    let h = grid.spacing();
    let n = grid.cells_per_axis();
    let v = u.values();
    let face = |flat: usize| -> f64 {
        let idx = grid.unravel(flat);
        let mut acc = 0.0;
        for axis in 0..grid.dim() {
            let mut j = idx;
            j[axis] = (j[axis] + 1) % n;
            let (a, b) = (v[flat], v[grid.ravel(&j)]);
            let (da, db) = (a + reg.mu, b + reg.mu);
            if da < ENTROPY_FLOOR || db < ENTROPY_FLOOR {
                continue;
            }
            acc += (b - a) * (db.ln() - da.ln());
        }
        acc
    };
    reg.delta * grid.cell_volume() / (h * h) * pairwise_sum_by(u.len(), &face)
}

/// Evaluates every functional of one snapshot.
pub fn record(
    state: &State,
    plan: &SpectralPlan,
    reg: &RegParams,
    opts: &DiagnosticsOptions,
) -> Result<DiagnosticsRecord> {
    let u = &state.u;
    u.check_nonnegative()?;
    let grid = *u.grid();
    let mut lp = BTreeMap::new();
    for p in [1.0, 2.0].iter().chain(opts.p_list.iter()) {
        lp.insert(p_key(*p), lp_norm(u, *p)?);
    }
    let vals = u.values();
    let dv = grid.cell_volume();
    let entropy = dv * pairwise_sum_by(vals.len(), &|i| entropy_density(vals[i]));
    let entropy_mu = dv * pairwise_sum_by(vals.len(), &|i| f_mu(vals[i], reg.mu));
    let h_energy = 0.5 * plan.h_norm_sq(u)?;
    let diss_first = plan.grad_h_norm_sq(u)?;
    let grad = plan.grad_potential(u)?;
    let diss_second = dv
        * pairwise_sum_by(vals.len(), &|i| {
            let g2: f64 = grad.iter().map(|c| c.values()[i] * c.values()[i]).sum();
            (vals[i] + reg.mu) * g2
        });
    let rec = DiagnosticsRecord {
        t: state.t,
        mass: integrate(u),
        linf: u.max_abs(),
        lp,
        entropy,
        entropy_mu,
        h_energy,
        diss_first,
        diss_second,
        diss_visc: viscous_dissipation(u, reg),
        support_radius: support_radius(u, opts.support_threshold)?,
    };
    Ok(rec)
}

/// Trapezoidal integral of `f(record)` over the window.
fn trapezoid(records: &[DiagnosticsRecord], f: impl Fn(&DiagnosticsRecord) -> f64) -> f64 {
    records
        .windows(2)
        .map(|w| 0.5 * (w[1].t - w[0].t) * (f(&w[0]) + f(&w[1])))
        .sum()
}

fn relative_residual(change: f64, dissipated: f64) -> f64 {
    let scale = change.abs().max(dissipated.abs());
    if scale == 0.0 {
        0.0
    } else {
        (change + dissipated).abs() / scale
    }
}

fn check_window(records: &[DiagnosticsRecord]) -> Result<()> {
    if records.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "energy residual needs at least 2 records, got {}",
            records.len()
        )));
    }
    Ok(())
}

/// Relative defect of `d/dt ∫F_μ(u) = -∫|∇H u|² - δ∫∇u·∇F_μ'(u)` over the
/// records of the window.
pub fn first_energy_residual(records: &[DiagnosticsRecord]) -> Result<f64> {
    check_window(records)?;
    let change = records[records.len() - 1].entropy_mu - records[0].entropy_mu;
    let dissipated = trapezoid(records, |r| r.diss_first + r.diss_visc);
    Ok(relative_residual(change, dissipated))
}

/// Relative defect of `d/dt ½∫|Hu|² = -∫(u+μ)|∇Ku|² - δ∫|∇H u|²`.
pub fn second_energy_residual(records: &[DiagnosticsRecord], delta: f64) -> Result<f64> {
    check_window(records)?;
    let change = records[records.len() - 1].h_energy - records[0].h_energy;
    let dissipated = trapezoid(records, |r| r.diss_second + delta * r.diss_first);
    Ok(relative_residual(change, dissipated))
}

/// Power-law fit `r(t) - r(0) ≈ e^{intercept} t^{beta}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    /// `None` when the radii do not grow beyond the starting value.
    pub beta: Option<f64>,
    pub intercept: f64,
    pub r_squared: f64,
    pub samples_used: usize,
}

impl GrowthFit {
    pub fn flagged(&self) -> bool {
        self.beta.is_none()
    }
}

/// Least-squares slope of `log(r - r₀)` against `log t` over the trailing
/// `window_fraction` of the samples.
pub fn fit_growth_exponent(times: &[f64], radii: &[f64], window_fraction: f64) -> Result<GrowthFit> {
    if times.len() != radii.len() {
        return Err(Error::LengthMismatch {
            expected: times.len(),
            got: radii.len(),
        });
    }
    if times.len() < 8 {
        return Err(Error::InsufficientData(format!(
            "growth fit needs at least 8 samples, got {}",
            times.len()
        )));
    }
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::param(
            "window_fraction",
            format!("must lie in (0, 1], got {window_fraction}"),
        ));
    }
    let r0 = radii[0];
    let start = times.len() - ((times.len() as f64 * window_fraction).ceil() as usize).max(2);
    let pts: Vec<(f64, f64)> = times[start..]
        .iter()
        .zip(&radii[start..])
        .filter(|(&t, &r)| t > 0.0 && r > r0)
        .map(|(&t, &r)| (t.ln(), (r - r0).ln()))
        .collect();
    let flagged = GrowthFit {
        beta: None,
        intercept: f64::NAN,
        r_squared: f64::NAN,
        samples_used: pts.len(),
    };
    if pts.len() < 2 || radii[radii.len() - 1] <= r0 {
        return Ok(flagged);
    }
    let m = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / m, b + y / m));
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = pts.iter().map(|(_, y)| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Ok(flagged);
    }
    let beta = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(GrowthFit {
        beta: Some(beta),
        intercept: my - beta * mx,
        r_squared,
        samples_used: pts.len(),
    })
}

/// One row per record, 17 significant digits.
pub fn write_csv(records: &[DiagnosticsRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", CSV_COLUMNS.join(","))?;
    for r in records {
        let row: Vec<String> = r.csv_row().iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Parses a diagnostics CSV into named columns.
pub fn read_csv(input: impl BufRead) -> Result<Vec<(String, Vec<f64>)>> {
    let mut lines = input.lines();
    let bad = |message: String| Error::Format {
        path: "<csv>".into(),
        message,
    };
    let header = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .map_err(|e| bad(e.to_string()))?;
    let mut columns: Vec<(String, Vec<f64>)> = header
        .split(',')
        .map(|c| (c.trim().to_string(), Vec::new()))
        .collect();
    for (row, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() {
            return Err(bad(format!(
                "row {} has {} fields, header has {}",
                row + 1,
                cells.len(),
                columns.len()
            )));
        }
        for (col, cell) in columns.iter_mut().zip(cells) {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| bad(format!("row {}: `{cell}` is not a number", row + 1)))?;
            col.1.push(v);
        }
    }
    Ok(columns)
}
