//! Barrier families and discrete comparison checks.
//!
//! Supersolutions: exponential tails `A e^{Ct - a|x|} + ε_b A e^{ηt}` and
//! propagation parabolas `a (Ct - (|x| - b))² + ε(1 + Dt)`. Subsolution: the
//! shrinking bump `c e^{-at} F(|x - x₀|/R)`. Comparison holds on the
//! grid × snapshot lattice up to `tol = 1e-9 ‖u₀‖∞`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frac_ops::FracParams;
use crate::grid::{Field, Grid, MAX_DIM};
use crate::solver::{RegParams, Solver, SolverConfig, State, Termination, Trajectory};

/// Relative comparison tolerance, multiplied by `‖u₀‖∞`.
pub const COMPARISON_TOL: f64 = 1e-9;

/// Piecewise-constant front speed: `(t_start, speed)` pairs, first at `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedSchedule {
    pub pieces: Vec<(f64, f64)>,
}

impl SpeedSchedule {
    pub fn new(pieces: Vec<(f64, f64)>) -> Result<Self> {
        let first = pieces.first().ok_or_else(|| Error::param("schedule", "needs at least one piece"))?;
        if first.0 != 0.0 {
            return Err(Error::param("schedule", "first piece must start at t = 0"));
        }
        for w in pieces.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::param("schedule", "start times must increase"));
            }
        }
        if pieces.iter().any(|p| !(p.1 >= 0.0 && p.1.is_finite())) {
            return Err(Error::param("schedule", "speeds must be finite and nonnegative"));
        }
        Ok(Self { pieces })
    }

    /// `∫₀ᵗ C(τ) dτ`.
    pub fn displacement(&self, t: f64) -> f64 {
        let mut total = 0.0;
        for (k, &(start, speed)) in self.pieces.iter().enumerate() {
            if t <= start {
                break;
            }
            let end = self.pieces.get(k + 1).map_or(t, |p| p.0.min(t));
            total += speed * (end - start);
        }
        total
    }
}

/// `Û(x,t) = A e^{Ct - a|x|} + ε_b A e^{ηt}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentialBarrier {
    pub amplitude: f64,
    pub rate: f64,
    #[serde(default)]
    pub speed: f64,
    #[serde(default)]
    pub eps_b: f64,
    #[serde(default)]
    pub eta: f64,
    /// Replaces `Ct` by `∫C` when present.
    #[serde(default)]
    pub schedule: Option<SpeedSchedule>,
}

impl ExponentialBarrier {
    pub fn new(amplitude: f64, rate: f64, speed: f64) -> Result<Self> {
        let b = Self {
            amplitude,
            rate,
            speed,
            eps_b: 0.0,
            eta: 0.0,
            schedule: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        positive("amplitude", self.amplitude)?;
        positive("rate", self.rate)?;
        for (name, v) in [("speed", self.speed), ("eps_b", self.eps_b), ("eta", self.eta)] {
            nonnegative(name, v)?;
        }
        Ok(())
    }

    fn travel(&self, t: f64) -> f64 {
        self.schedule.as_ref().map_or(self.speed * t, |s| s.displacement(t))
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        let r = norm(x);
        let a = self.amplitude;
        a * (self.travel(t) - self.rate * r).exp() + self.eps_b * a * (self.eta * t).exp()
    }

    /// Smallest speed meeting `u ≤ value + tol` at one point, `t > 0`.
    fn speed_needed(&self, r: f64, t: f64, u: f64, tol: f64) -> f64 {
        let a = self.amplitude;
        let excess = u - tol - self.eps_b * a * (self.eta * t).exp();
        if excess <= 0.0 {
            return 0.0;
        }
        ((excess / a).ln() + self.rate * r) / t
    }
}

/// `U(x,t) = a(Ct - (|x| - b))² + ε(1 + Dt)` inside the front `|x| ≤ b + Ct`,
/// `ε(1 + Dt)` beyond it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParabolaBarrier {
    pub curvature: f64,
    pub radius: f64,
    #[serde(default)]
    pub speed: f64,
    #[serde(default)]
    pub eps_off: f64,
    #[serde(default)]
    pub offset_rate: f64,
    #[serde(default)]
    pub schedule: Option<SpeedSchedule>,
}

impl ParabolaBarrier {
    pub fn new(curvature: f64, radius: f64, speed: f64) -> Result<Self> {
        let b = Self {
            curvature,
            radius,
            speed,
            eps_off: 0.0,
            offset_rate: 0.0,
            schedule: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        positive("curvature", self.curvature)?;
        positive("radius", self.radius)?;
        for (name, v) in [
            ("speed", self.speed),
            ("eps_off", self.eps_off),
            ("offset_rate", self.offset_rate),
        ] {
            nonnegative(name, v)?;
        }
        Ok(())
    }

    fn travel(&self, t: f64) -> f64 {
        self.schedule.as_ref().map_or(self.speed * t, |s| s.displacement(t))
    }

    /// Front position `b + ∫C`.
    pub fn front(&self, t: f64) -> f64 {
        self.radius + self.travel(t)
    }

    fn offset(&self, t: f64) -> f64 {
        self.eps_off * (1.0 + self.offset_rate * t)
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        let depth = self.front(t) - norm(x);
        let off = self.offset(t);
        if depth >= 0.0 {
            self.curvature * depth * depth + off
        } else {
            off
        }
    }

    fn speed_needed(&self, r: f64, t: f64, u: f64, tol: f64) -> f64 {
        let excess = u - tol - self.offset(t);
        if excess <= 0.0 {
            return 0.0;
        }
        ((r - self.radius + (excess / self.curvature).sqrt()) / t).max(0.0)
    }
}

/// `U(x,t) = c e^{-at} F(|x - x₀|/R)` with `F(r) = ½(1 - 4r²)²` for `r ≤ ½`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsolutionBump {
    pub decay: f64,
    #[serde(default)]
    pub center: [f64; MAX_DIM],
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "one")]
    pub height: f64,
}

fn one() -> f64 {
    1.0
}

impl SubsolutionBump {
    pub fn new(decay: f64) -> Result<Self> {
        let b = Self {
            decay,
            center: [0.0; MAX_DIM],
            scale: 1.0,
            height: 1.0,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        positive("decay", self.decay)?;
        positive("scale", self.scale)?;
        positive("height", self.height)
    }

    /// The fixed radial profile.
    pub fn profile(r: f64) -> f64 {
        if r >= 0.5 {
            0.0
        } else {
            let q = 1.0 - 4.0 * r * r;
            0.5 * q * q
        }
    }

    fn shape(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        self.height * Self::profile(r2.sqrt() / self.scale)
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        (-self.decay * t).exp() * self.shape(x)
    }

    /// Bump strictly below `u0`: centered at its maximum, supported on the
    /// largest ball where `u0 ≥ ½ max u0`, with height the minimum there.
    pub fn fit_under(u0: &Field, decay: f64) -> Result<Self> {
        let grid = u0.grid();
        let dim = grid.dim();
        let vals = u0.values();
        let (peak, &top) = vals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .ok_or_else(|| Error::InsufficientData("empty field".into()))?;
        if !(top > 0.0) {
            return Err(Error::InitialDomination { margin: top });
        }
        let c = grid.position(peak);
        let dist = |i: usize| {
            let x = grid.position(i);
            (0..dim).map(|a| (x[a] - c[a]).powi(2)).sum::<f64>().sqrt()
        };
        let radius = (0..vals.len())
            .filter(|&i| vals[i] < 0.5 * top)
            .map(dist)
            .fold(f64::INFINITY, f64::min);
        if !radius.is_finite() {
            return Err(Error::param("initial_data", "no cell falls below half the maximum"));
        }
        let height = (0..vals.len())
            .filter(|&i| dist(i) < radius)
            .map(|i| vals[i])
            .fold(f64::INFINITY, f64::min);
        let mut center = [0.0; MAX_DIM];
        center[..dim].copy_from_slice(&c[..dim]);
        let b = Self {
            decay,
            center,
            scale: 2.0 * radius,
            height,
        };
        b.validate()?;
        Ok(b)
    }
}

/// Any barrier, for closed-form evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Barrier {
    Exponential(ExponentialBarrier),
    Parabola(ParabolaBarrier),
    Subsolution(SubsolutionBump),
}

pub fn eval_barrier(b: &Barrier, x: &[f64], t: f64) -> f64 {
    match b {
        Barrier::Exponential(e) => e.value(x, t),
        Barrier::Parabola(p) => p.value(x, t),
        Barrier::Subsolution(f) => f.value(x, t),
    }
}

/// Supersolution families accepted by [`check_above`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum UpperBarrier {
    Exponential(ExponentialBarrier),
    Parabola(ParabolaBarrier),
}

impl UpperBarrier {
    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        match self {
            UpperBarrier::Exponential(e) => e.value(x, t),
            UpperBarrier::Parabola(p) => p.value(x, t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            UpperBarrier::Exponential(e) => e.validate(),
            UpperBarrier::Parabola(p) => p.validate(),
        }
    }

    pub fn speed(&self) -> f64 {
        match self {
            UpperBarrier::Exponential(e) => e.speed,
            UpperBarrier::Parabola(p) => p.speed,
        }
    }

    /// Same shape, constant speed `c`.
    pub fn with_speed(&self, c: f64) -> Self {
        match self {
            UpperBarrier::Exponential(e) => UpperBarrier::Exponential(ExponentialBarrier {
                speed: c,
                schedule: None,
                ..e.clone()
            }),
            UpperBarrier::Parabola(p) => UpperBarrier::Parabola(ParabolaBarrier {
                speed: c,
                schedule: None,
                ..p.clone()
            }),
        }
    }

    fn speed_needed(&self, r: f64, t: f64, u: f64, tol: f64) -> f64 {
        match self {
            UpperBarrier::Exponential(e) => e.speed_needed(r, t, u, tol),
            UpperBarrier::Parabola(p) => p.speed_needed(r, t, u, tol),
        }
    }
}

/// First grid point, in time then cell order, where comparison fails.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub cell: usize,
    pub x: Vec<f64>,
    pub u: f64,
    pub barrier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub passed: bool,
    /// `min (barrier - u)` for supersolutions, `min (u - barrier)` for subsolutions.
    pub min_margin: f64,
    pub first_violation: Option<Violation>,
    pub clipped_mass: f64,
    pub tolerance: f64,
}

/// Result of [`check_below`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsolutionReport {
    pub comparison: ComparisonReport,
    /// Smallest decay rate with no contact; `None` if no rate suffices.
    pub decay_required: Option<f64>,
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

fn nonnegative(name: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be nonnegative, got {v}")))
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn tolerance(snapshots: &[State]) -> Result<f64> {
    let first = snapshots
        .first()
        .ok_or_else(|| Error::InsufficientData("trajectory has no snapshots".into()))?;
    Ok(COMPARISON_TOL * first.u.max_abs())
}

/// Minimum margin over one snapshot and the first cell below `-tol`.
fn scan(state: &State, tol: f64, margin: &(impl Fn(&[f64], f64, f64) -> (f64, f64) + Sync)) -> (f64, Option<Violation>) {
    let grid = state.u.grid();
    let dim = grid.dim();
    let mut min = f64::INFINITY;
    let mut first = None;
    for (i, &u) in state.u.values().iter().enumerate() {
        let x = grid.position(i);
        let (m, b) = margin(&x[..dim], state.t, u);
        min = min.min(m);
        if first.is_none() && m < -tol {
            first = Some(Violation {
                t: state.t,
                cell: i,
                x: x[..dim].to_vec(),
                u,
                barrier: b,
            });
        }
    }
    (min, first)
}

fn compare(
    snapshots: &[State],
    clipped_mass: f64,
    tol: f64,
    margin: impl Fn(&[f64], f64, f64) -> (f64, f64) + Sync,
) -> ComparisonReport {
    let per: Vec<(f64, Option<Violation>)> = snapshots.par_iter().map(|s| scan(s, tol, &margin)).collect();
    let min_margin = per.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let first_violation = per.into_iter().find_map(|p| p.1);
    ComparisonReport {
        passed: first_violation.is_none(),
        min_margin,
        first_violation,
        clipped_mass,
        tolerance: tol,
    }
}

/// Initial margin `min (barrier - u₀)` must be at least `-tol`.
fn initial_check_above(first: &State, b: &UpperBarrier, tol: f64) -> Result<()> {
    let (m, _) = scan(first, tol, &|x, t, u| {
        let v = b.value(x, t);
        (v - u, v)
    });
    if m < -tol {
        return Err(Error::InitialDomination { margin: m });
    }
    Ok(())
}

/// Checks `u ≤ barrier + tol` on every snapshot and cell.
pub fn check_above(traj: &Trajectory, b: &UpperBarrier) -> Result<ComparisonReport> {
    check_above_states(&traj.snapshots, traj.clipped_mass, b)
}

/// As [`check_above`] on bare snapshots.
pub fn check_above_states(snapshots: &[State], clipped_mass: f64, b: &UpperBarrier) -> Result<ComparisonReport> {
    b.validate()?;
    let tol = tolerance(snapshots)?;
    initial_check_above(&snapshots[0], b, tol)?;
    Ok(compare(snapshots, clipped_mass, tol, |x, t, u| {
        let v = b.value(x, t);
        (v - u, v)
    }))
}

/// Checks `u ≥ bump - tol` on every snapshot and cell and computes the
/// smallest decay rate for which that holds.
pub fn check_below(traj: &Trajectory, b: &SubsolutionBump) -> Result<SubsolutionReport> {
    check_below_states(&traj.snapshots, traj.clipped_mass, b)
}

/// As [`check_below`] on bare snapshots.
pub fn check_below_states(snapshots: &[State], clipped_mass: f64, b: &SubsolutionBump) -> Result<SubsolutionReport> {
    b.validate()?;
    let tol = tolerance(snapshots)?;
    let first = &snapshots[0];
    let grid = first.u.grid();
    let dim = grid.dim();
    // Strict domination on the bump's support at t = 0.
    for (i, &u) in first.u.values().iter().enumerate() {
        let x = grid.position(i);
        let f = b.value(&x[..dim], first.t);
        if f > 0.0 && u <= f {
            return Err(Error::InitialDomination { margin: u - f });
        }
    }
    let comparison = compare(snapshots, clipped_mass, tol, |x, t, u| {
        let v = b.value(x, t);
        (u - v, v)
    });
    // u ≥ e^{-at} F - tol ⟺ a ≥ ln(F / (u + tol)) / t wherever F > u + tol.
    let t0 = first.t;
    let needed: Vec<Option<f64>> = snapshots[1..]
        .par_iter()
        .map(|s| {
            let dt = s.t - t0;
            let mut worst = 0.0f64;
            for (i, &u) in s.u.values().iter().enumerate() {
                let x = grid.position(i);
                let f = b.shape(&x[..dim]);
                let floor = u + tol;
                if f > floor {
                    if floor <= 0.0 || dt <= 0.0 {
                        return None;
                    }
                    worst = worst.max((f / floor).ln() / dt);
                }
            }
            Some(worst)
        })
        .collect();
    let decay_required = needed
        .into_iter()
        .try_fold(0.0f64, |acc, n| n.map(|v| acc.max(v)));
    Ok(SubsolutionReport {
        comparison,
        decay_required,
    })
}

/// Calibrated speed together with the run it came from.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub c_min: f64,
    /// Comparison of the run against the barrier at `c_min`.
    pub report: ComparisonReport,
    pub trajectory: Trajectory,
}

/// Smallest constant speed for which `shape` dominates the run of `u0` over
/// `[0, t_end]`, checked after every step.
pub fn calibrate_speed(
    u0: &Field,
    fp: &FracParams,
    reg: &RegParams,
    cfg: &SolverConfig,
    shape: &UpperBarrier,
) -> Result<Calibration> {
    shape.validate()?;
    let solver = Solver::new(*u0.grid(), fp, *reg, cfg.clone())?;
    let tol = COMPARISON_TOL * u0.max_abs();
    let first = State {
        t: 0.0,
        u: u0.clone(),
        step_count: 0,
    };
    initial_check_above(&first, shape, tol)?;
    let grid = *u0.grid();
    let mut c_min = 0.0f64;
    let traj = solver.run_with(u0, |state| {
        c_min = c_min.max(speed_for_state(&grid, state, shape, tol));
        Ok(())
    })?;
    if let Termination::BoxExit { t, .. } = traj.status {
        return Err(Error::BoxExit { t });
    }
    if !c_min.is_finite() {
        return Err(Error::Bracket(format!("no finite speed dominates the run (got {c_min})")));
    }
    // Round-off in the inversion is absorbed by a relative nudge.
    let c_min = c_min * (1.0 + 1e-12);
    let report = check_above(&traj, &shape.with_speed(c_min))?;
    Ok(Calibration {
        c_min,
        report,
        trajectory: traj,
    })
}

fn speed_for_state(grid: &Grid, state: &State, shape: &UpperBarrier, tol: f64) -> f64 {
    if state.t <= 0.0 {
        return 0.0;
    }
    let dim = grid.dim();
    state
        .u
        .values()
        .par_iter()
        .enumerate()
        .map(|(i, &u)| {
            let x = grid.position(i);
            shape.speed_needed(norm(&x[..dim]), state.t, u, tol)
        })
        .reduce(|| 0.0, f64::max)
}

/// Symmetry `û(x,t) = A u(Bx, Tt)` with `T = A B^{2-2s}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingMap {
    pub amplitude: f64,
    pub stretch: f64,
    pub s: f64,
}

impl ScalingMap {
    pub fn new(amplitude: f64, stretch: f64, s: f64) -> Result<Self> {
        positive("amplitude", amplitude)?;
        positive("stretch", stretch)?;
        Ok(Self { amplitude, stretch, s })
    }

    pub fn time_factor(&self) -> f64 {
        self.amplitude * self.stretch.powf(2.0 - 2.0 * self.s)
    }

    /// `A u(Bx)` sampled on `target` by multilinear interpolation of `u`,
    /// zero outside the source box.
    pub fn apply(&self, u: &Field, target: Grid) -> Result<Field> {
        if target.dim() != u.grid().dim() {
            return Err(Error::GridMismatch);
        }
        Ok(Field::from_fn(target, |x| {
            let mut y = [0.0; MAX_DIM];
            for (a, b) in y.iter_mut().zip(x) {
                *a = self.stretch * b;
            }
            self.amplitude * interpolate(u, &y[..x.len()])
        }))
    }
}

/// Multilinear interpolation between cell centers; zero outside the box.
pub fn interpolate(u: &Field, x: &[f64]) -> f64 {
    let grid = u.grid();
    let n = grid.cells_per_axis();
    let h = grid.spacing();
    let dim = grid.dim();
    let mut base = [0usize; MAX_DIM];
    let mut frac = [0.0; MAX_DIM];
    for a in 0..dim {
        let q = (x[a] + grid.half_length()) / h - 0.5;
        if !(q >= 0.0 && q <= (n - 1) as f64) {
            return 0.0;
        }
        let i = (q.floor() as usize).min(n - 2);
        base[a] = i;
        frac[a] = q - i as f64;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << dim) {
        let mut idx = [0usize; MAX_DIM];
        let mut w = 1.0;
        for a in 0..dim {
            let bit = (corner >> a) & 1;
            idx[a] = base[a] + bit;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if w != 0.0 {
            acc += w * u.values()[grid.ravel(&idx[..dim])];
        }
    }
    acc
}

/// Parabola-admissible datum `L φ(√(a/L) x)` with `φ(ξ) = (1 - |ξ|²)₊²`.
/// It has supremum `L` and support radius `√(L/a)`, and lies strictly below
/// `a(|x| - b)²` on its support for `b = 2√(L/a)`.
pub fn parabola_datum(grid: Grid, level: f64, curvature: f64) -> Result<(Field, ParabolaBarrier)> {
    positive("level", level)?;
    positive("curvature", curvature)?;
    let k = (curvature / level).sqrt();
    let u = Field::from_fn(grid, |x| {
        let q = 1.0 - k * k * x.iter().map(|c| c * c).sum::<f64>();
        if q > 0.0 {
            level * q * q
        } else {
            0.0
        }
    });
    Ok((u, ParabolaBarrier::new(curvature, 2.0 / k, 0.0)?))
}

/// One calibration of the speed-scaling sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedSample {
    pub level: f64,
    pub curvature: f64,
    pub horizon: f64,
    pub c_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Slope of `log C_min` against `log L`; `None` when undefined.
    pub exp_l: Option<f64>,
    /// Slope of `log C_min` against `log a`; `None` when undefined.
    pub exp_a: Option<f64>,
    pub samples: Vec<SpeedSample>,
}

impl ScalingFit {
    pub fn flagged(&self) -> bool {
        self.exp_l.is_none() || self.exp_a.is_none()
    }
}

/// Least-squares slope of `log y` against `log x`; `None` with fewer than two
/// distinct abscissae or a nonpositive ordinate.
pub fn log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || y.iter().any(|v| !(*v > 0.0)) || x.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 1e-24) {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// Calibrates the parabola speed for the rescaled data `L φ(√(a/L) x)`, once
/// per `L` at the reference curvature and once per `a` at the reference level.
/// Horizons and `dt_max` scale with the symmetry's time factor so that every
/// run covers the same rescaled time window as the reference run.
pub fn speed_scaling_fit(
    grid: Grid,
    fp: &FracParams,
    reg: &RegParams,
    cfg: &SolverConfig,
    levels: &[f64],
    curvatures: &[f64],
) -> Result<ScalingFit> {
    let s = fp.s();
    if s >= 0.5 {
        return Err(Error::param(
            "s",
            format!("the speed-scaling law needs s < 1/2, got {s}"),
        ));
    }
    if levels.is_empty() || curvatures.is_empty() {
        return Err(Error::InsufficientData("need at least one level and one curvature".into()));
    }
    let reference = |v: &[f64]| if v.contains(&1.0) { 1.0 } else { v[0] };
    let (l_ref, a_ref) = (reference(levels), reference(curvatures));
    let mut jobs: Vec<(f64, f64)> = levels.iter().map(|&l| (l, a_ref)).collect();
    jobs.extend(curvatures.iter().filter(|&&a| a != a_ref).map(|&a| (l_ref, a)));
    let samples: Vec<SpeedSample> = jobs
        .par_iter()
        .map(|&(level, curvature)| {
            // With A = L, B = √(a/L) the base run maps to this one.
            let map = ScalingMap::new(level, (curvature / level).sqrt(), s)?;
            let time = map.time_factor();
            let local = SolverConfig {
                t_end: cfg.t_end / time,
                dt_max: cfg.dt_max / time,
                ..cfg.clone()
            };
            let (u0, shape) = parabola_datum(grid, level, curvature)?;
            let cal = calibrate_speed(&u0, fp, reg, &local, &UpperBarrier::Parabola(shape))?;
            Ok(SpeedSample {
                level,
                curvature,
                horizon: local.t_end,
                c_min: cal.c_min,
            })
        })
        .collect::<Result<_>>()?;
    let pick = |f: &dyn Fn(&SpeedSample) -> bool, key: &dyn Fn(&SpeedSample) -> f64| {
        let sel: Vec<&SpeedSample> = samples.iter().filter(|x| f(x)).collect();
        let xs: Vec<f64> = sel.iter().map(|x| key(x)).collect();
        let ys: Vec<f64> = sel.iter().map(|x| x.c_min).collect();
        log_slope(&xs, &ys)
    };
    let exp_l = pick(&|x| x.curvature == a_ref, &|x| x.level);
    let exp_a = pick(&|x| x.level == l_ref, &|x| x.curvature);
    Ok(ScalingFit {
        exp_l,
        exp_a,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Trajectory;

    fn frozen(u: Field, times: &[f64]) -> Trajectory {
        let grid = *u.grid();
        Trajectory {
            grid,
            s: 0.25,
            snapshots: times
                .iter()
                .enumerate()
                .map(|(k, &t)| State {
                    t,
                    u: u.clone(),
                    step_count: k,
                })
                .collect(),
            records: Vec::new(),
            status: Termination::Completed,
            steps: times.len(),
            clipped_mass: 0.0,
            min_before_clip: 0.0,
            max_step_mass_change: 0.0,
        }
    }

    #[test]
    fn closed_form_values() {
        let e = ExponentialBarrier::new(3.0, 1.0, 0.5).unwrap();
        assert_eq!(eval_barrier(&Barrier::Exponential(e.clone()), &[0.0], 0.0), 3.0);
        let want = 3.0 * (0.5f64 * 2.0 - 1.5).exp();
        assert!((e.value(&[1.5], 2.0) - want).abs() < 1e-15);
        let p = ParabolaBarrier::new(2.0, 1.0, 0.7).unwrap();
        assert_eq!(p.value(&[1.0 + 0.7 * 3.0], 3.0), 0.0);
        assert_eq!(p.value(&[5.0], 3.0), 0.0);
        assert!((p.value(&[0.0], 0.0) - 2.0).abs() < 1e-15);
        let f = SubsolutionBump::new(1.0).unwrap();
        assert_eq!(eval_barrier(&Barrier::Subsolution(f.clone()), &[0.0], 0.0), 0.5);
        assert_eq!(f.value(&[0.5], 0.0), 0.0);
        assert!(f.value(&[0.25], 1.0) < f.value(&[0.25], 0.0));
    }

    #[test]
    fn offsets_are_added_everywhere() {
        let mut p = ParabolaBarrier::new(1.0, 1.0, 0.0).unwrap();
        p.eps_off = 0.1;
        p.offset_rate = 2.0;
        assert!((p.value(&[10.0], 1.0) - 0.3).abs() < 1e-15);
        let mut e = ExponentialBarrier::new(2.0, 1.0, 0.0).unwrap();
        e.eps_b = 0.5;
        e.eta = 1.0;
        let far = e.value(&[50.0], 1.0);
        assert!((far - 2.0 * 0.5 * 1f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn profile_is_smooth_and_monotone() {
        let mut last = SubsolutionBump::profile(0.0);
        for k in 1..=60 {
            let v = SubsolutionBump::profile(k as f64 / 100.0);
            assert!(v <= last);
            last = v;
        }
        // Zero value and slope at the edge.
        let d = (SubsolutionBump::profile(0.5 - 1e-6) - SubsolutionBump::profile(0.5)) / 1e-6;
        assert!(d.abs() < 1e-4);
    }

    #[test]
    fn schedule_integrates_piecewise() {
        let s = SpeedSchedule::new(vec![(0.0, 1.0), (2.0, 3.0)]).unwrap();
        assert_eq!(s.displacement(1.0), 1.0);
        assert_eq!(s.displacement(3.0), 2.0 + 3.0);
        assert!(SpeedSchedule::new(vec![(1.0, 1.0)]).is_err());
        let mut e = ExponentialBarrier::new(1.0, 1.0, 0.0).unwrap();
        e.schedule = Some(s);
        assert!((e.value(&[0.0], 3.0) - 5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_run_passes_with_the_barrier_minimum() {
        let grid = Grid::new(1, 64, 4.0).unwrap();
        let traj = frozen(Field::zeros(grid), &[0.0, 0.5, 1.0]);
        let b = ExponentialBarrier::new(2.0, 1.0, 0.3).unwrap();
        let rep = check_above(&traj, &UpperBarrier::Exponential(b.clone())).unwrap();
        assert!(rep.passed);
        let edge = grid.position(0)[0].abs();
        assert!((rep.min_margin - b.value(&[edge], 0.0)).abs() < 1e-15);
    }

    #[test]
    fn edited_cell_is_reported_first() {
        let grid = Grid::new(1, 64, 4.0).unwrap();
        let u = Field::from_fn(grid, |x| (-x[0].abs()).exp());
        let mut traj = frozen(u, &[0.0, 0.5, 1.0]);
        traj.snapshots[1].u.values_mut()[40] = 50.0;
        traj.snapshots[2].u.values_mut()[10] = 50.0;
        let b = UpperBarrier::Exponential(ExponentialBarrier::new(2.0, 1.0, 0.0).unwrap());
        let rep = check_above(&traj, &b).unwrap();
        assert!(!rep.passed);
        let v = rep.first_violation.unwrap();
        assert_eq!((v.t, v.cell, v.u), (0.5, 40, 50.0));
        assert!(rep.min_margin < 0.0);
    }

    #[test]
    fn initial_excess_is_an_error() {
        let grid = Grid::new(1, 64, 4.0).unwrap();
        let traj = frozen(Field::constant(grid, 5.0), &[0.0, 1.0]);
        let b = UpperBarrier::Exponential(ExponentialBarrier::new(2.0, 1.0, 1.0).unwrap());
        assert!(matches!(check_above(&traj, &b), Err(Error::InitialDomination { .. })));
    }

    #[test]
    fn frozen_data_stay_above_a_shrinking_bump() {
        let grid = Grid::new(2, 32, 2.0).unwrap();
        let u = Field::from_fn(grid, |x| if x[0].hypot(x[1]) < 1.0 { 1.0 } else { 0.0 });
        let traj = frozen(u, &[0.0, 1.0, 2.0]);
        for a in [0.01, 1.0, 30.0] {
            let rep = check_below(&traj, &SubsolutionBump::new(a).unwrap()).unwrap();
            assert!(rep.comparison.passed);
            assert_eq!(rep.decay_required, Some(0.0));
        }
    }

    #[test]
    fn vanishing_data_fail_the_subsolution_precondition() {
        let grid = Grid::new(1, 32, 2.0).unwrap();
        let traj = frozen(Field::zeros(grid), &[0.0, 1.0]);
        assert!(matches!(
            check_below(&traj, &SubsolutionBump::new(1.0).unwrap()),
            Err(Error::InitialDomination { .. })
        ));
    }

    #[test]
    fn required_decay_matches_a_decaying_center() {
        let grid = Grid::new(1, 65, 2.0).unwrap();
        let c = grid.nearest_cell(&[0.0]).unwrap();
        let u0 = Field::constant(grid, 1.0);
        let mut traj = frozen(u0, &[0.0, 1.0]);
        // At t = 1 the center drops to 0.1 < F(0) = 0.5.
        traj.snapshots[1].u.values_mut()[c] = 0.1;
        let rep = check_below(&traj, &SubsolutionBump::new(1.0).unwrap()).unwrap();
        let tol = COMPARISON_TOL;
        let want = (0.5 / (0.1 + tol)).ln();
        assert!((rep.decay_required.unwrap() - want).abs() < 1e-12);
        assert!(!rep.comparison.passed);
        let ok = check_below(&traj, &SubsolutionBump::new(want * 1.001).unwrap()).unwrap();
        assert!(ok.comparison.passed);
    }

    #[test]
    fn fitted_bump_sits_strictly_below_the_datum() {
        let grid = Grid::new(2, 64, 4.0).unwrap();
        let u0 = Field::from_fn(grid, |x| (-(x[0] - 0.5).powi(2) - x[1] * x[1]).exp());
        let b = SubsolutionBump::fit_under(&u0, 2.0).unwrap();
        assert!((b.center[0] - 0.5).abs() <= grid.spacing());
        assert!(b.height >= 0.5 * u0.max() && b.height <= u0.max());
        let traj = frozen(u0.clone(), &[0.0, 0.5]);
        assert!(check_below(&traj, &b).unwrap().comparison.passed);
        assert!(SubsolutionBump::fit_under(&Field::zeros(grid), 1.0).is_err());
    }

    #[test]
    fn zero_datum_calibrates_to_zero_speed() {
        let grid = Grid::new(1, 64, 4.0).unwrap();
        let cfg = SolverConfig {
            t_end: 0.2,
            ..Default::default()
        };
        let fp = FracParams::new(0.25, 1).unwrap();
        let shape = UpperBarrier::Parabola(ParabolaBarrier::new(1.0, 1.0, 0.0).unwrap());
        let cal = calibrate_speed(&Field::zeros(grid), &fp, &RegParams::default(), &cfg, &shape).unwrap();
        assert_eq!(cal.c_min, 0.0);
        assert!(cal.report.passed);
    }

    #[test]
    fn calibrated_speed_is_tight_and_monotone_in_horizon() {
        let grid = Grid::new(1, 256, 10.0).unwrap();
        let fp = FracParams::new(0.25, 1).unwrap();
        let (u0, shape) = parabola_datum(grid, 1.0, 1.0).unwrap();
        let shape = UpperBarrier::Parabola(shape);
        let mut last = 0.0;
        for t_end in [5.0, 10.0] {
            let cfg = SolverConfig {
                t_end,
                snapshot_stride: 1,
                ..Default::default()
            };
            let cal = calibrate_speed(&u0, &fp, &RegParams::default(), &cfg, &shape).unwrap();
            assert!(cal.report.passed);
            assert!(cal.c_min > 0.0 && cal.c_min >= last);
            last = cal.c_min;
            let slower = check_above(&cal.trajectory, &shape.with_speed(0.99 * cal.c_min)).unwrap();
            assert!(!slower.passed);
        }
    }

    #[test]
    fn log_slope_recovers_power_laws() {
        let x = [0.5, 1.0, 2.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(0.75)).collect();
        assert!((log_slope(&x, &y).unwrap() - 0.75).abs() < 1e-12);
        assert!(log_slope(&[1.0], &[2.0]).is_none());
    }

    #[test]
    fn single_point_sweep_is_flagged() {
        let grid = Grid::new(1, 128, 10.0).unwrap();
        let fp = FracParams::new(0.25, 1).unwrap();
        let cfg = SolverConfig {
            t_end: 0.2,
            ..Default::default()
        };
        let fit = speed_scaling_fit(grid, &fp, &RegParams::default(), &cfg, &[1.0], &[1.0]).unwrap();
        assert!(fit.flagged());
        assert_eq!(fit.samples.len(), 1);
        let bad = FracParams::new(0.6, 2).unwrap();
        let g2 = Grid::new(2, 16, 4.0).unwrap();
        assert!(speed_scaling_fit(g2, &bad, &RegParams::default(), &cfg, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn scaling_map_interpolates_exactly_on_linear_data() {
        let grid = Grid::new(1, 64, 4.0).unwrap();
        let u = Field::from_fn(grid, |x| 2.0 + x[0]);
        let map = ScalingMap::new(3.0, 0.5, 0.25).unwrap();
        let v = map.apply(&u, grid).unwrap();
        for i in 0..grid.len() {
            let x = grid.position(i)[0];
            assert!((v.values()[i] - 3.0 * (2.0 + 0.5 * x)).abs() < 1e-12);
        }
        assert!((map.time_factor() - 3.0 * 0.5f64.powf(1.5)).abs() < 1e-15);
    }
}
