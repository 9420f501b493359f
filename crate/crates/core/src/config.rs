//! Run configuration: JSON schema, defaults, flat-key shorthand, presets and
//! initial-data families.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::barriers::{parabola_datum, Barrier};
use crate::diagnostics::DiagnosticsOptions;
use crate::error::{Error, Result};
use crate::frac_ops::FracParams;
use crate::grid::{Field, Grid};
use crate::selfsim::{FractionalBarenblatt, PmeBarenblatt};
use crate::solver::{Integrator, Mode, Reconstruction, RegParams, SolverConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub cells_per_axis: usize,
    pub half_length: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            dim: 1,
            cells_per_axis: 1024,
            half_length: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub s: f64,
    pub mode: Mode,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            s: 0.25,
            mode: Mode::Fractional,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub cfl_number: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    pub reconstruction: Reconstruction,
    pub dt_max: f64,
    pub snapshot_stride: usize,
    pub stiffness: f64,
    pub exit_threshold: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            cfl_number: d.cfl_number,
            t_end: d.t_end,
            integrator: d.integrator,
            reconstruction: d.reconstruction,
            dt_max: d.dt_max,
            snapshot_stride: d.snapshot_stride,
            stiffness: d.stiffness,
            exit_threshold: d.exit_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsSection {
    pub directory: PathBuf,
    pub emit_csv: bool,
    pub emit_svg: bool,
    pub emit_snapshots: bool,
}

impl Default for OutputsSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            emit_csv: true,
            emit_svg: true,
            emit_snapshots: true,
        }
    }
}

/// Grid of the speed-scaling sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub levels: Vec<f64>,
    pub curvatures: Vec<f64>,
    pub s_values: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            levels: vec![0.5, 1.0, 2.0, 4.0],
            curvatures: vec![0.5, 1.0, 2.0, 4.0],
            s_values: vec![0.15, 0.25, 0.35],
        }
    }
}

fn default_one() -> f64 {
    1.0
}

fn default_center() -> Vec<f64> {
    Vec::new()
}

/// Initial-data families. Lengths are in box units; `center` defaults to the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Zero {},
    /// `A e^{-|x-c|²/w²}`.
    Gaussian {
        #[serde(default = "default_one")]
        amplitude: f64,
        #[serde(default = "default_one")]
        width: f64,
        #[serde(default = "default_center")]
        center: Vec<f64>,
    },
    /// `A` on the ball of radius `radius`.
    Box {
        #[serde(default = "default_one")]
        amplitude: f64,
        #[serde(default = "default_one")]
        radius: f64,
    },
    /// Two Gaussians of width `width` at `±separation/2` along the first axis.
    DoubleBump {
        #[serde(default = "default_one")]
        amplitude: f64,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_half")]
        width: f64,
    },
    /// `min(cap, A e^{-a|x|})`.
    TruncatedExponential {
        #[serde(default = "default_two")]
        amplitude: f64,
        #[serde(default = "default_one")]
        rate: f64,
        #[serde(default = "default_one")]
        cap: f64,
    },
    /// `height` on the ball of radius `radius`, with a C¹ cosine ramp to zero
    /// over `transition`.
    Bump {
        #[serde(default = "default_one")]
        height: f64,
        #[serde(default = "default_one")]
        radius: f64,
        #[serde(default = "default_half")]
        transition: f64,
    },
    /// `L (1 - (a/L)|x|²)₊²`, admissible under the parabola `a(|x| - 2√(L/a))²`.
    Parabola {
        #[serde(default = "default_one")]
        level: f64,
        #[serde(default = "default_one")]
        curvature: f64,
    },
    /// Fractional self-similar profile at time `t0`.
    Barenblatt {
        #[serde(default = "default_one")]
        mass: f64,
        #[serde(default = "default_t0")]
        t0: f64,
    },
    /// Porous medium self-similar profile at time `t0`.
    PmeBarenblatt {
        #[serde(default = "default_one")]
        mass: f64,
        #[serde(default = "default_pme_t0")]
        t0: f64,
    },
    /// Field stored by a previous run.
    Snapshot { path: PathBuf },
}

fn default_two() -> f64 {
    2.0
}

fn default_half() -> f64 {
    0.5
}

fn default_separation() -> f64 {
    3.0
}

fn default_t0() -> f64 {
    0.1
}

fn default_pme_t0() -> f64 {
    0.25
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Barenblatt {
            mass: 1.0,
            t0: default_t0(),
        }
    }
}

fn cosine_ramp(r: f64, radius: f64, transition: f64) -> f64 {
    if r <= radius {
        1.0
    } else if r >= radius + transition {
        0.0
    } else {
        let q = (r - radius) / transition;
        0.5 * (1.0 + (std::f64::consts::PI * q).cos())
    }
}

impl InitialData {
    /// Samples the datum at cell centers. Snapshot paths resolve against `base`.
    pub fn build(&self, grid: Grid, s: f64, base: &Path) -> Result<Field> {
        let dim = grid.dim();
        let norm = |x: &[f64]| x.iter().map(|c| c * c).sum::<f64>().sqrt();
        let f = match self {
            InitialData::Zero {} => Field::zeros(grid),
            InitialData::Gaussian {
                amplitude,
                width,
                center,
            } => {
                if !center.is_empty() && center.len() != dim {
                    return Err(Error::param("center", format!("needs {dim} coordinates")));
                }
                positive("width", *width)?;
                let c = center.clone();
                Field::from_fn(grid, move |x| {
                    let r2: f64 = x
                        .iter()
                        .enumerate()
                        .map(|(a, v)| (v - c.get(a).copied().unwrap_or(0.0)).powi(2))
                        .sum();
                    amplitude * (-r2 / (width * width)).exp()
                })
            }
            InitialData::Box { amplitude, radius } => {
                Field::from_fn(grid, |x| if norm(x) <= *radius { *amplitude } else { 0.0 })
            }
            InitialData::DoubleBump {
                amplitude,
                separation,
                width,
            } => {
                positive("width", *width)?;
                Field::from_fn(grid, |x| {
                    let rest: f64 = x[1..].iter().map(|c| c * c).sum();
                    [-0.5, 0.5]
                        .iter()
                        .map(|side| {
                            let d = x[0] - side * separation;
                            (-(d * d + rest) / (width * width)).exp()
                        })
                        .sum::<f64>()
                        * amplitude
                })
            }
            InitialData::TruncatedExponential { amplitude, rate, cap } => {
                Field::from_fn(grid, |x| (amplitude * (-rate * norm(x)).exp()).min(*cap))
            }
            InitialData::Bump {
                height,
                radius,
                transition,
            } => {
                positive("transition", *transition)?;
                Field::from_fn(grid, |x| height * cosine_ramp(norm(x), *radius, *transition))
            }
            InitialData::Parabola { level, curvature } => parabola_datum(grid, *level, *curvature)?.0,
            InitialData::Barenblatt { mass, t0 } => {
                positive("t0", *t0)?;
                FractionalBarenblatt::new(dim, s, *mass)?.field(grid, *t0)
            }
            InitialData::PmeBarenblatt { mass, t0 } => {
                positive("t0", *t0)?;
                PmeBarenblatt::new(dim, *mass)?.field(grid, *t0)
            }
            InitialData::Snapshot { path } => {
                let full = if path.is_absolute() { path.clone() } else { base.join(path) };
                let snap = crate::io::read_snapshot(&full)?;
                if snap.field.grid() != &grid {
                    return Err(Error::GridMismatch);
                }
                snap.field
            }
        };
        f.check_finite()?;
        f.check_nonnegative()?;
        Ok(f)
    }

    /// Time at which the datum sits on its self-similar clock (zero otherwise).
    pub fn time_origin(&self) -> f64 {
        match self {
            InitialData::Barenblatt { t0, .. } | InitialData::PmeBarenblatt { t0, .. } => *t0,
            _ => 0.0,
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub model: ModelSection,
    pub reg: RegParams,
    pub solver: SolverSection,
    pub initial_data: InitialData,
    pub outputs: OutputsSection,
    pub diagnostics: DiagnosticsOptions,
    /// Seed of the randomized property checks.
    pub seed: u64,
    /// Barrier used by `barrier-check` and `calibrate`.
    pub barrier: Option<Barrier>,
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.dim, self.grid.cells_per_axis, self.grid.half_length)
    }

    pub fn frac_params(&self) -> Result<FracParams> {
        FracParams::new(self.model.s, self.grid.dim)
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            cfl_number: s.cfl_number,
            t_end: s.t_end,
            integrator: s.integrator,
            reconstruction: s.reconstruction,
            mode: self.model.mode,
            dt_max: s.dt_max,
            snapshot_stride: s.snapshot_stride,
            stiffness: s.stiffness,
            exit_threshold: s.exit_threshold,
            diagnostics: self.diagnostics.clone(),
        }
    }

    /// Checks every constraint of the inner types.
    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.frac_params()?;
        self.reg.validate()?;
        self.solver_config().validate()?;
        let t = self.diagnostics.support_threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::param("support_threshold", format!("must lie in (0, 1), got {t}")));
        }
        if let Some(b) = &self.barrier {
            match b {
                Barrier::Exponential(e) => e.validate()?,
                Barrier::Parabola(p) => p.validate()?,
                Barrier::Subsolution(f) => f.validate()?,
            }
        }
        Ok(())
    }
}

/// Flat shorthand keys and the section each belongs to.
const FLAT_KEYS: [(&str, &str, &str); 17] = [
    ("dim", "grid", "dim"),
    ("N", "grid", "cells_per_axis"),
    ("cells_per_axis", "grid", "cells_per_axis"),
    ("X", "grid", "half_length"),
    ("half_length", "grid", "half_length"),
    ("s", "model", "s"),
    ("mode", "model", "mode"),
    ("delta", "reg", "delta"),
    ("mu", "reg", "mu"),
    ("eps_moll", "reg", "eps_moll"),
    ("cfl_number", "solver", "cfl_number"),
    ("t_end", "solver", "t_end"),
    ("integrator", "solver", "integrator"),
    ("reconstruction", "solver", "reconstruction"),
    ("dt_max", "solver", "dt_max"),
    ("snapshot_stride", "solver", "snapshot_stride"),
    ("directory", "outputs", "directory"),
];

fn config_error(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Moves flat shorthand keys into their sections.
fn nest_flat_keys(root: &mut Map<String, Value>) -> Result<()> {
    for (flat, section, key) in FLAT_KEYS {
        let Some(v) = root.remove(flat) else { continue };
        let entry = root
            .entry(section.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        let Value::Object(sec) = entry else {
            return Err(config_error(section, "must be an object"));
        };
        if sec.contains_key(key) {
            return Err(config_error(
                format!("{section}.{key}"),
                format!("given both as `{flat}` and inside `{section}`"),
            ));
        }
        sec.insert(key.to_string(), v);
    }
    Ok(())
}

/// Accepts `{"snapshot": path}` and a missing `params` for initial data.
fn normalize_initial(root: &mut Map<String, Value>) {
    let Some(Value::Object(init)) = root.get_mut("initial_data") else { return };
    if let Some(path) = init.remove("snapshot") {
        init.insert("family".into(), Value::String("snapshot".into()));
        let mut params = Map::new();
        params.insert("path".into(), path);
        init.insert("params".into(), Value::Object(params));
    } else if !init.contains_key("params") {
        init.insert("params".into(), Value::Object(Map::new()));
    }
}

/// Parses and validates a JSON configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| config_error("", e.to_string()))?;
    let Value::Object(mut root) = value else {
        return Err(config_error("", "configuration must be a JSON object"));
    };
    nest_flat_keys(&mut root)?;
    normalize_initial(&mut root);
    let cfg: RunConfig = serde_path_to_error::deserialize(Value::Object(root)).map_err(|e| {
        let path = e.path().to_string();
        config_error(path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub const PRESETS: [&str; 6] = [
    "baseline",
    "tail_s025",
    "propagation_s025",
    "positivity",
    "scaling_sweep",
    "pme_limit",
];

/// Named baseline configurations.
pub fn preset(name: &str) -> Result<RunConfig> {
    let text = match name {
        "baseline" => {
            r#"{"s": 0.25, "t_end": 5, "integrator": "heun", "reconstruction": "minmod",
                "initial_data": {"family": "barenblatt", "params": {"mass": 1, "t0": 0.1}}}"#
        }
        "tail_s025" => {
            r#"{"s": 0.25, "t_end": 5, "snapshot_stride": 1,
                "initial_data": {"family": "truncated_exponential",
                                 "params": {"amplitude": 2, "rate": 1, "cap": 1}},
                "barrier": {"family": "exponential", "amplitude": 2, "rate": 1}}"#
        }
        "propagation_s025" => {
            r#"{"s": 0.25, "X": 10, "N": 2048, "t_end": 5, "snapshot_stride": 1,
                "initial_data": {"family": "parabola", "params": {"level": 1, "curvature": 1}},
                "barrier": {"family": "parabola", "curvature": 1, "radius": 2}}"#
        }
        "positivity" => {
            r#"{"s": 0.25, "t_end": 5,
                "initial_data": {"family": "bump", "params": {"height": 1, "radius": 1, "transition": 0.5}},
                "barrier": {"family": "subsolution", "decay": 1}}"#
        }
        "scaling_sweep" => {
            r#"{"s": 0.25, "X": 10, "N": 2048, "t_end": 5, "integrator": "heun", "reconstruction": "minmod",
                "sweep": {"levels": [0.5, 1, 2, 4], "curvatures": [0.5, 1, 2, 4],
                          "s_values": [0.15, 0.25, 0.35]}}"#
        }
        "pme_limit" => {
            r#"{"mode": "pme_limit", "t_end": 0.75,
                "initial_data": {"family": "pme_barenblatt", "params": {"mass": 1, "t0": 0.25}}}"#
        }
        other => {
            return Err(Error::param(
                "preset",
                format!("unknown preset `{other}`; known: {}", PRESETS.join(", ")),
            ))
        }
    };
    parse_config(text)
}
