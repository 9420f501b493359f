//! Python bindings. Fields cross the boundary as flat row-major lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fracpme_core::barriers::{calibrate_speed, Barrier, UpperBarrier};
use fracpme_core::config::{self, RunConfig};
use fracpme_core::riesz_oracle;
use fracpme_core::solver::{self, Termination};
use fracpme_core::{grid, Error, Field, FracParams, Grid, SpectralPlan};

fn to_py(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    if e.is_validation() {
        PyValueError::new_err(msg)
    } else {
        PyRuntimeError::new_err(msg)
    }
}

fn field(values: Vec<f64>, dim: usize, cells_per_axis: usize, half_length: f64) -> PyResult<Field> {
    let g = Grid::new(dim, cells_per_axis, half_length).map_err(to_py)?;
    Field::new(g, values).map_err(to_py)
}

fn load(config_json: &str) -> PyResult<RunConfig> {
    let cfg = config::parse_config(config_json).map_err(to_py)?;
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Validated configuration with defaults filled, as JSON.
#[pyfunction]
fn parse_config(config_json: &str) -> PyResult<String> {
    let cfg = load(config_json)?;
    Ok(serde_json::to_string(&cfg).expect("config serializes"))
}

/// Configuration of a named preset, as JSON.
#[pyfunction]
fn preset(name: &str) -> PyResult<String> {
    let cfg = config::preset(name).map_err(to_py)?;
    Ok(serde_json::to_string(&cfg).expect("config serializes"))
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    config::PRESETS.to_vec()
}

/// `h^n Σ u`.
#[pyfunction]
fn integrate(values: Vec<f64>, dim: usize, cells_per_axis: usize, half_length: f64) -> PyResult<f64> {
    Ok(grid::integrate(&field(values, dim, cells_per_axis, half_length)?))
}

/// Spectral `K u = (-Δ)^{-s} u` with the zero mode removed.
#[pyfunction]
fn riesz_potential(values: Vec<f64>, dim: usize, cells_per_axis: usize, half_length: f64, s: f64) -> PyResult<Vec<f64>> {
    let u = field(values, dim, cells_per_axis, half_length)?;
    let fp = FracParams::new(s, dim).map_err(to_py)?;
    let plan = SpectralPlan::new(*u.grid(), &fp).map_err(to_py)?;
    Ok(plan.riesz_potential(&u).map_err(to_py)?.into_values())
}

/// Runs the configured experiment. Returns the status, the diagnostics
/// columns and the final density.
#[pyfunction]
fn run<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = load(config_json)?;
    let traj = py
        .detach(|| -> fracpme_core::Result<_> {
            let g = cfg.grid()?;
            let fp = cfg.frac_params()?;
            let u0 = cfg.initial_data.build(g, cfg.model.s, std::path::Path::new("."))?;
            solver::run(&u0, &fp, &cfg.reg, &cfg.solver_config())
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    let status = match traj.status {
        Termination::Completed => "completed",
        Termination::BoxExit { .. } => "box_exit",
    };
    out.set_item("status", status)?;
    out.set_item("steps", traj.steps)?;
    let cols = PyDict::new(py);
    cols.set_item("t", traj.records.iter().map(|r| r.t).collect::<Vec<_>>())?;
    cols.set_item("mass", traj.records.iter().map(|r| r.mass).collect::<Vec<_>>())?;
    cols.set_item("linf", traj.records.iter().map(|r| r.linf).collect::<Vec<_>>())?;
    cols.set_item("l2", traj.records.iter().map(|r| r.l2()).collect::<Vec<_>>())?;
    cols.set_item("h_energy", traj.records.iter().map(|r| r.h_energy).collect::<Vec<_>>())?;
    cols.set_item("support_radius", traj.records.iter().map(|r| r.support_radius).collect::<Vec<_>>())?;
    out.set_item("diagnostics", cols)?;
    out.set_item("final", traj.final_state().u.values().to_vec())?;
    out.set_item("t_final", traj.final_state().t)?;
    Ok(out)
}

/// Smallest speed of the configured exponential or parabola barrier.
#[pyfunction]
fn calibrate(py: Python<'_>, config_json: &str) -> PyResult<f64> {
    let cfg = load(config_json)?;
    let shape = match &cfg.barrier {
        Some(Barrier::Exponential(e)) => UpperBarrier::Exponential(e.clone()),
        Some(Barrier::Parabola(p)) => UpperBarrier::Parabola(p.clone()),
        _ => return Err(PyValueError::new_err("config needs an exponential or parabola barrier")),
    };
    py.detach(|| -> fracpme_core::Result<f64> {
        let g = cfg.grid()?;
        let fp = cfg.frac_params()?;
        let u0 = cfg.initial_data.build(g, cfg.model.s, std::path::Path::new("."))?;
        Ok(calibrate_speed(&u0, &fp, &cfg.reg, &cfg.solver_config(), &shape)?.c_min)
    })
    .map_err(to_py)
}

/// Relative L∞ discrepancies of the spectral operators against quadrature.
#[pyfunction]
fn cross_validate<'py>(
    py: Python<'py>,
    values: Vec<f64>,
    dim: usize,
    cells_per_axis: usize,
    half_length: f64,
    s: f64,
    window: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let u = field(values, dim, cells_per_axis, half_length)?;
    let fp = FracParams::new(s, dim).map_err(to_py)?;
    let d = py.detach(|| riesz_oracle::cross_validate(&u, &fp, window)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("potential", d.potential)?;
    out.set_item("grad", d.grad)?;
    out.set_item("lap", d.lap)?;
    out.set_item("cells", d.cells)?;
    Ok(out)
}

/// Randomized half-ball check: `(failures, worst relative margin)`.
#[pyfunction]
fn half_ball_property(py: Python<'_>, seed: u64, count: usize) -> PyResult<(usize, f64)> {
    let r = py.detach(|| riesz_oracle::half_ball_property(seed, count)).map_err(to_py)?;
    Ok((r.failures(), r.worst_relative_margin()))
}

#[pymodule]
fn fracpme(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(riesz_potential, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(half_ball_property, m)?)?;
    Ok(())
}
