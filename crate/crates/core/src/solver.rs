//! Explicit conservative finite-volume integration of
//! `u_t = δΔu + ∇·((u+μ)∇K_ε u)`.
//!
//! Face fluxes `F_{i+½} = (u_up + μ)·v_{i+½} - δ(u_{i+1} - u_i)/h` use the
//! mean of the adjacent cell-centered velocities `v = -∇K_ε u` and the upwind
//! density. Periodic telescoping makes `Σ u hⁿ` invariant to round-off.

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, DiagnosticsOptions, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::frac_ops::{FracParams, SpectralPlan};
use crate::grid::{integrate, support_radius, Field, Grid};

/// Regularization of the equation: viscosity, degeneracy lift, kernel mollification.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegParams {
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub eps_moll: f64,
}

impl RegParams {
    pub fn new(delta: f64, mu: f64, eps_moll: f64) -> Result<Self> {
        let reg = Self { delta, mu, eps_moll };
        reg.validate()?;
        Ok(reg)
    }

    /// Each parameter must lie in `[0, 1)`.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("delta", self.delta), ("mu", self.mu), ("eps_moll", self.eps_moll)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::param(
                    name,
                    format!("regularization parameters must lie in [0, 1), got {v}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Euler,
    /// Two-stage strong-stability-preserving Runge–Kutta.
    Heun,
}

/// Face density used in the transport flux.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reconstruction {
    /// Value of the upwind cell.
    #[default]
    Upwind,
    /// Upwind cell plus a minmod-limited slope; stays nonnegative for CFL ≤ ½.
    Minmod,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Fractional,
    /// `u_t = ∇·(u∇u)`: the pressure is the density itself.
    PmeLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub cfl_number: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    pub reconstruction: Reconstruction,
    pub mode: Mode,
    pub dt_max: f64,
    pub snapshot_stride: usize,
    /// `Λ` in the stiffness bound `h^{2-2s} / (Λ(‖u‖∞ + μ))`.
    pub stiffness: f64,
    /// Relative level that counts as mass reaching the box edge.
    pub exit_threshold: f64,
    pub diagnostics: DiagnosticsOptions,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            cfl_number: 0.4,
            t_end: 1.0,
            integrator: Integrator::Euler,
            reconstruction: Reconstruction::Upwind,
            mode: Mode::Fractional,
            dt_max: 0.05,
            snapshot_stride: 10,
            stiffness: 4.0,
            exit_threshold: 1e-6,
            diagnostics: DiagnosticsOptions::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_number > 0.0 && self.cfl_number <= 1.0) {
            return Err(Error::param(
                "cfl_number",
                format!("must lie in (0, 1], got {}", self.cfl_number),
            ));
        }
        for (name, v) in [
            ("t_end", self.t_end),
            ("dt_max", self.dt_max),
            ("stiffness", self.stiffness),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if self.snapshot_stride == 0 {
            return Err(Error::param("snapshot_stride", "must be at least 1"));
        }
        if !(self.exit_threshold > 0.0 && self.exit_threshold < 1.0) {
            return Err(Error::param(
                "exit_threshold",
                format!("must lie in (0, 1), got {}", self.exit_threshold),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: Field,
    pub step_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// Mass came within two cells of the box edge.
    BoxExit { t: f64, cell: usize },
}

/// Snapshots and their diagnostics.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Grid,
    pub s: f64,
    pub snapshots: Vec<State>,
    pub records: Vec<DiagnosticsRecord>,
    pub status: Termination,
    pub steps: usize,
    /// Total mass removed by clipping negative values.
    pub clipped_mass: f64,
    /// Most negative value seen before clipping (0 if none).
    pub min_before_clip: f64,
    /// Largest relative mass change over a single step, before clipping.
    pub max_step_mass_change: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        self.snapshots.last().expect("trajectory holds the initial state")
    }

    pub fn completed(&self) -> bool {
        self.status == Termination::Completed
    }
}

/// Result of one time step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: State,
    pub dt: f64,
    pub clipped_mass: f64,
    pub min_before_clip: f64,
    /// `|Σu_new - Σu_old| / Σ|u_old|` before clipping.
    pub mass_change: f64,
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Velocity `v = -∇K u` for the given plan. A plan of order zero gives `-∇u`.
pub fn velocity(u: &Field, plan: &SpectralPlan) -> Result<Vec<Field>> {
    Ok(plan
        .grad_potential(u)?
        .into_iter()
        .map(|g| g.map(|x| -x))
        .collect())
}

/// Time stepper bound to one grid, order, regularization and configuration.
#[derive(Clone, Debug)]
pub struct Solver {
    grid: Grid,
    s: f64,
    plan: SpectralPlan,
    reg: RegParams,
    cfg: SolverConfig,
}

impl Solver {
    pub fn new(grid: Grid, fp: &FracParams, reg: RegParams, cfg: SolverConfig) -> Result<Self> {
        reg.validate()?;
        cfg.validate()?;
        if fp.dim() != grid.dim() {
            return Err(Error::GridMismatch);
        }
        let s = match cfg.mode {
            Mode::Fractional => fp.s(),
            Mode::PmeLimit => 0.0,
        };
        let plan = SpectralPlan::with_order(grid, s).mollified(reg.eps_moll)?;
        Ok(Self {
            grid,
            s,
            plan,
            reg,
            cfg,
        })
    }

    /// Effective order of the potential (zero in the porous medium limit).
    pub fn order(&self) -> f64 {
        self.s
    }

    pub fn plan(&self) -> &SpectralPlan {
        &self.plan
    }

    pub fn reg(&self) -> &RegParams {
        &self.reg
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn velocity(&self, u: &Field) -> Result<Vec<Field>> {
        velocity(u, &self.plan)
    }

    /// Largest stable step for `u` with velocity `v` at CFL number 1, no cap.
    fn stability_bound(&self, u: &Field, v: &[Field]) -> f64 {
        let h = self.grid.spacing();
        let n = self.grid.dim() as f64;
        let vmax = v.iter().map(Field::max_abs).fold(0.0, f64::max);
        let transport = h / (vmax + 1e-30);
        let viscous = h * h / (2.0 * n * self.reg.delta + 1e-30);
        let nonlocal =
            h.powf(2.0 - 2.0 * self.s) / (self.cfg.stiffness * (u.max_abs() + self.reg.mu) + 1e-30);
        transport.min(viscous).min(nonlocal)
    }

    fn admissible_dt(&self, u: &Field, v: &[Field]) -> f64 {
        (self.cfg.cfl_number * self.stability_bound(u, v)).min(self.cfg.dt_max)
    }

    /// `min(cfl·min(transport, viscous, nonlocal), dt_max)`.
    pub fn cfl_dt(&self, state: &State) -> Result<f64> {
        let v = self.velocity(&state.u)?;
        Ok(self.admissible_dt(&state.u, &v))
    }

    /// Time derivative of the scheme: `-(1/h) Σ_axes (F_{i+½} - F_{i-½})`.
    fn rate(&self, u: &[f64], v: &[Field]) -> Vec<f64> {
        let grid = self.grid;
        let n = grid.cells_per_axis();
        let h = grid.spacing();
        let (delta, mu) = (self.reg.delta, self.reg.mu);
        let fluxes: Vec<Vec<f64>> = (0..grid.dim())
            .map(|axis| {
                let va = v[axis].values();
                (0..u.len())
                    .into_par_iter()
                    .map(|i| {
                        let base = grid.unravel(i);
                        let at = |shift: usize| {
                            let mut idx = base;
                            idx[axis] = (idx[axis] + shift) % n;
                            grid.ravel(&idx)
                        };
                        let j = at(1);
                        let vf = 0.5 * (va[i] + va[j]);
                        let up = match self.cfg.reconstruction {
                            Reconstruction::Upwind => {
                                if vf >= 0.0 {
                                    u[i]
                                } else {
                                    u[j]
                                }
                            }
                            Reconstruction::Minmod => {
                                if vf >= 0.0 {
                                    let l = u[at(n - 1)];
                                    u[i] + 0.5 * minmod(u[i] - l, u[j] - u[i])
                                } else {
                                    let r = u[at(2)];
                                    u[j] - 0.5 * minmod(u[j] - u[i], r - u[j])
                                }
                            }
                        };
                        (up + mu) * vf - delta * (u[j] - u[i]) / h
                    })
                    .collect()
            })
            .collect();
        (0..u.len())
            .into_par_iter()
            .map(|i| {
                let idx = grid.unravel(i);
                let mut div = 0.0;
                for (axis, flux) in fluxes.iter().enumerate() {
                    let mut left = idx;
                    left[axis] = (left[axis] + n - 1) % n;
                    div += flux[i] - flux[grid.ravel(&left)];
                }
                -div / h
            })
            .collect()
    }

    fn euler_stage(&self, u: &Field, v: &[Field], dt: f64) -> Vec<f64> {
        let r = self.rate(u.values(), v);
        u.values().iter().zip(&r).map(|(a, b)| a + dt * b).collect()
    }

    /// One step of size `dt`. Fails if `dt` exceeds the stability bound.
    pub fn step_with_dt(&self, state: &State, dt: f64) -> Result<StepOutcome> {
        let v = self.velocity(&state.u)?;
        self.advance(state, &v, dt)
    }

    /// One step at the CFL-admissible size, shortened to land on `t_end`.
    pub fn step(&self, state: &State) -> Result<StepOutcome> {
        let v = self.velocity(&state.u)?;
        let dt = self
            .admissible_dt(&state.u, &v)
            .min((self.cfg.t_end - state.t).max(0.0));
        self.advance(state, &v, dt)
    }

    fn advance(&self, state: &State, v: &[Field], dt: f64) -> Result<StepOutcome> {
        if state.u.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let bound = self.stability_bound(&state.u, v);
        if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, bound });
        }
        let mut next = self.euler_stage(&state.u, v, dt);
        if self.cfg.integrator == Integrator::Heun {
            let mid = Field::from_vec_unchecked(self.grid, next);
            let v1 = self.velocity(&mid)?;
            let second = self.euler_stage(&mid, &v1, dt);
            next = state
                .u
                .values()
                .iter()
                .zip(&second)
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
        }
        let step = state.step_count + 1;
        let t = state.t + dt;
        if let Some(i) = next.iter().position(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure {
                step,
                t,
                reason: format!("non-finite density at cell {i} (dt = {dt:e})"),
            });
        }
        let old_sum: f64 = crate::grid::pairwise_sum(state.u.values());
        let new_sum: f64 = crate::grid::pairwise_sum(&next);
        let scale = crate::grid::pairwise_sum_by(next.len(), &|i| state.u.values()[i].abs());
        let mass_change = if scale > 0.0 {
            (new_sum - old_sum).abs() / scale
        } else {
            (new_sum - old_sum).abs()
        };
        let mut clipped = 0.0;
        let mut min_before = 0.0f64;
        for x in next.iter_mut() {
            if *x < 0.0 {
                min_before = min_before.min(*x);
                clipped -= *x;
                *x = 0.0;
            }
        }
        let clipped_mass = clipped * self.grid.cell_volume();
        Ok(StepOutcome {
            state: State {
                t,
                u: Field::from_vec_unchecked(self.grid, next),
                step_count: step,
            },
            dt,
            clipped_mass,
            min_before_clip: min_before,
            mass_change,
        })
    }

    pub fn record(&self, state: &State) -> Result<DiagnosticsRecord> {
        diagnostics::record(state, &self.plan, &self.reg, &self.cfg.diagnostics)
    }

    /// First cell within two cells of the edge holding more than
    /// `exit_threshold·max u`.
    fn edge_cell(&self, u: &Field) -> Option<usize> {
        let cut = self.cfg.exit_threshold * u.max();
        let margin = 2.0 * self.grid.spacing();
        u.values()
            .iter()
            .enumerate()
            .find(|&(i, &x)| x > cut && x > 0.0 && self.grid.distance_to_edge(i) < margin)
            .map(|(i, _)| i)
    }

    /// Integrates `u0` to `t_end`, recording a snapshot every `snapshot_stride`
    /// steps plus the first and last states.
    pub fn run(&self, u0: &Field) -> Result<Trajectory> {
        self.run_with(u0, |_| Ok(()))
    }

    /// As [`Solver::run`], calling `observe` after every step.
    pub fn run_with(
        &self,
        u0: &Field,
        mut observe: impl FnMut(&State) -> Result<()>,
    ) -> Result<Trajectory> {
        if u0.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        u0.check_finite()?;
        u0.check_nonnegative()?;
        let diameter = 2.0 * support_radius(u0, self.cfg.exit_threshold)?;
        if diameter > self.grid.half_length() {
            warn!(
                "support diameter {diameter:.3} exceeds the half length {:.3}; periodic images may pollute the potential",
                self.grid.half_length()
            );
        }
        let mut state = State {
            t: 0.0,
            u: u0.clone(),
            step_count: 0,
        };
        let mut traj = Trajectory {
            grid: self.grid,
            s: self.s,
            snapshots: vec![state.clone()],
            records: vec![self.record(&state)?],
            status: Termination::Completed,
            steps: 0,
            clipped_mass: 0.0,
            min_before_clip: 0.0,
            max_step_mass_change: 0.0,
        };
        if let Some(cell) = self.edge_cell(&state.u) {
            traj.status = Termination::BoxExit { t: 0.0, cell };
            return Ok(traj);
        }
        let t_end = self.cfg.t_end;
        while state.t < t_end * (1.0 - 1e-14) {
            let out = self.step(&state)?;
            traj.clipped_mass += out.clipped_mass;
            traj.min_before_clip = traj.min_before_clip.min(out.min_before_clip);
            traj.max_step_mass_change = traj.max_step_mass_change.max(out.mass_change);
            state = out.state;
            observe(&state)?;
            let exit = self.edge_cell(&state.u);
            let last = state.t >= t_end * (1.0 - 1e-14) || exit.is_some();
            if last || state.step_count.is_multiple_of(self.cfg.snapshot_stride) {
                traj.records.push(self.record(&state)?);
                traj.snapshots.push(state.clone());
            }
            if let Some(cell) = exit {
                warn!("mass reached the box edge at t = {:.4} (cell {cell})", state.t);
                traj.status = Termination::BoxExit { t: state.t, cell };
                break;
            }
        }
        traj.steps = state.step_count;
        if traj.clipped_mass > 0.0 {
            let total = integrate(u0).abs().max(f64::MIN_POSITIVE);
            debug!(
                "clipped mass {:.3e} ({:.3e} of total), most negative value {:.3e}",
                traj.clipped_mass,
                traj.clipped_mass / total,
                traj.min_before_clip
            );
        }
        Ok(traj)
    }
}

/// Convenience wrapper: build a [`Solver`] and run it.
pub fn run(u0: &Field, fp: &FracParams, reg: &RegParams, cfg: &SolverConfig) -> Result<Trajectory> {
    Solver::new(*u0.grid(), fp, *reg, cfg.clone())?.run(u0)
}
