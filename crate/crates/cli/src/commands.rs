//! Subcommand implementations.

use std::path::{Path, PathBuf};

use fracpme_core::barriers::{
    calibrate_speed, check_above_states, check_below_states, parabola_datum, speed_scaling_fit, Barrier,
    ExponentialBarrier, SubsolutionBump, UpperBarrier,
};
use fracpme_core::config::{load_config, preset, InitialData, RunConfig};
use fracpme_core::diagnostics::{self, fit_growth_exponent, DiagnosticsRecord};
use fracpme_core::io::{list_snapshots, read_csv_file, read_snapshot, write_atomic, write_csv_file, write_json, write_snapshot};
use fracpme_core::plot::{line_plot, Series};
use fracpme_core::riesz_oracle::{cross_validate, half_ball_property};
use fracpme_core::solver::{Solver, State, Termination, Trajectory};
use fracpme_core::{Error, Field, FracParams, Grid};
use serde_json::{json, Value};

use crate::{Command, Common, Failure};

/// Relative L∞ agreement required of `oracle-check`.
const ORACLE_TOL: f64 = 0.02;
/// Trailing fraction of the run used for the growth-exponent fit.
const GROWTH_WINDOW: f64 = 0.5;

type Outcome = std::result::Result<(), Failure>;

pub fn dispatch(cmd: Command) -> Outcome {
    match cmd {
        Command::Run(c) => run(&c),
        Command::Diagnose { common, snapshot } => diagnose(&common, &snapshot),
        Command::BarrierCheck { common, snapshot } => barrier_check(&common, &snapshot),
        Command::Calibrate(c) => calibrate(&c),
        Command::Sweep(c) => sweep(&c),
        Command::OracleCheck { common, cases } => oracle_check(&common, cases),
        Command::Plot {
            common,
            csv,
            columns,
            snapshot,
        } => plot(&common, csv, &columns, snapshot),
    }
}

/// Resolved configuration with the directory relative paths resolve against.
struct Loaded {
    cfg: RunConfig,
    base: PathBuf,
    out: PathBuf,
}

fn load(c: &Common) -> std::result::Result<Loaded, Failure> {
    let (mut cfg, base) = match (&c.config, &c.preset) {
        (Some(path), _) => {
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (load_config(path)?, base)
        }
        (None, Some(name)) => (preset(name)?, PathBuf::from(".")),
        (None, None) => (RunConfig::default(), PathBuf::from(".")),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.outputs.directory = out.clone();
    }
    cfg.validate()?;
    let out = cfg.outputs.directory.clone();
    Ok(Loaded { cfg, base, out })
}

fn initial(l: &Loaded) -> std::result::Result<(Grid, FracParams, Field), Failure> {
    let grid = l.cfg.grid()?;
    let fp = l.cfg.frac_params()?;
    let u0 = l.cfg.initial_data.build(grid, l.cfg.model.s, &l.base)?;
    Ok((grid, fp, u0))
}

fn solver(l: &Loaded, grid: Grid, fp: &FracParams) -> std::result::Result<Solver, Failure> {
    Ok(Solver::new(grid, fp, l.cfg.reg, l.cfg.solver_config())?)
}

fn write_text(path: &Path, text: &str) -> Outcome {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

/// Values of one line of cells through the origin along the first axis.
fn profile(u: &Field) -> (Vec<f64>, Vec<f64>) {
    let g = u.grid();
    let n = g.cells_per_axis();
    let mut idx = [n / 2; fracpme_core::grid::MAX_DIM];
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        idx[0] = i;
        xs.push(g.center(i));
        ys.push(u.values()[g.ravel(&idx[..g.dim()])]);
    }
    (xs, ys)
}

fn column_series(records: &[DiagnosticsRecord]) -> Vec<(String, Vec<f64>)> {
    let mut buf = Vec::new();
    diagnostics::write_csv(records, &mut buf).expect("in-memory write");
    diagnostics::read_csv(std::io::Cursor::new(buf)).expect("CSV written above reparses")
}

fn plot_columns(dir: &Path, columns: &[(String, Vec<f64>)], wanted: &[String]) -> std::result::Result<Vec<PathBuf>, Failure> {
    let t = columns
        .iter()
        .find(|(n, _)| n == "t")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Failure::Usage("CSV has no `t` column".into()))?;
    for w in wanted {
        if !columns.iter().any(|(n, _)| n == w) {
            return Err(Failure::Usage(format!("unknown column `{w}`")));
        }
    }
    let mut written = Vec::new();
    for (name, values) in columns {
        if name == "t" || (!wanted.is_empty() && !wanted.contains(name)) {
            continue;
        }
        let svg = line_plot(name, "t", name, &[Series::new(name.clone(), t.clone(), values.clone())]);
        let path = dir.join(format!("{name}.svg"));
        write_text(&path, &svg)?;
        written.push(path);
    }
    Ok(written)
}

fn write_profile(dir: &Path, first: &State, last: &State) -> Outcome {
    let (x0, y0) = profile(&first.u);
    let (x1, y1) = profile(&last.u);
    let svg = line_plot(
        "density profile",
        "x",
        "u",
        &[
            Series::new(format!("t = {}", first.t), x0, y0),
            Series::new(format!("t = {}", last.t), x1, y1),
        ],
    );
    write_text(&dir.join("profile.svg"), &svg)
}

fn relative(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        (a - b).abs()
    } else {
        (a - b).abs() / b.abs()
    }
}

/// Writes CSV, snapshots, plots and the summary of a finished trajectory.
fn write_trajectory(l: &Loaded, traj: &Trajectory, extra: Value) -> std::result::Result<Value, Failure> {
    let o = &l.cfg.outputs;
    std::fs::create_dir_all(&l.out).map_err(|e| Error::Io {
        path: l.out.display().to_string(),
        source: e,
    })?;
    if o.emit_csv {
        write_csv_file(&l.out.join("diagnostics.csv"), &traj.records)?;
    }
    if o.emit_snapshots {
        for st in &traj.snapshots {
            let bin = l.out.join("snapshots").join(format!("snap_{:08}.bin", st.step_count));
            write_snapshot(&bin, &st.u, st.t, traj.s)?;
        }
    }
    if o.emit_svg {
        let plots = l.out.join("plots");
        plot_columns(&plots, &column_series(&traj.records), &[])?;
        write_profile(&plots, &traj.snapshots[0], traj.final_state())?;
    }
    let first = &traj.records[0];
    let last = traj.records.last().expect("records hold the initial state");
    let times: Vec<f64> = traj.records.iter().map(|r| r.t).collect();
    let radii: Vec<f64> = traj.records.iter().map(|r| r.support_radius).collect();
    let growth = fit_growth_exponent(&times, &radii, GROWTH_WINDOW).ok();
    let summary = json!({
        "status": traj.status,
        "steps": traj.steps,
        "t_final": traj.final_state().t,
        "time_origin": l.cfg.initial_data.time_origin(),
        "snapshots": traj.snapshots.len(),
        "mass_initial": first.mass,
        "mass_final": last.mass,
        "mass_drift": relative(last.mass, first.mass),
        "linf_initial": first.linf,
        "linf_final": last.linf,
        "support_radius_final": last.support_radius,
        "clipped_mass": traj.clipped_mass,
        "min_before_clip": traj.min_before_clip,
        "max_step_mass_change": traj.max_step_mass_change,
        "first_energy_residual": diagnostics::first_energy_residual(&traj.records).ok(),
        "second_energy_residual": diagnostics::second_energy_residual(&traj.records, l.cfg.reg.delta).ok(),
        "growth_fit": growth,
        "extra": extra,
        "config": l.cfg,
    });
    write_json(&l.out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn box_exit(traj: &Trajectory) -> Outcome {
    match traj.status {
        Termination::Completed => Ok(()),
        Termination::BoxExit { t, .. } => Err(Error::BoxExit { t }.into()),
    }
}

fn run(c: &Common) -> Outcome {
    let l = load(c)?;
    let (grid, fp, u0) = initial(&l)?;
    let traj = solver(&l, grid, &fp)?.run(&u0)?;
    let summary = write_trajectory(&l, &traj, Value::Null)?;
    print_json(&json!({
        "status": summary["status"],
        "steps": summary["steps"],
        "mass_drift": summary["mass_drift"],
        "out": l.out,
    }));
    box_exit(&traj)
}

/// Stored snapshots sorted by time, with the order recorded in their sidecars.
fn load_states(path: &Path) -> std::result::Result<(Vec<State>, f64), Failure> {
    let files = if path.is_dir() { list_snapshots(path)? } else { vec![path.to_path_buf()] };
    if files.is_empty() {
        return Err(Error::InsufficientData(format!("no snapshots in {}", path.display())).into());
    }
    let mut snaps = Vec::with_capacity(files.len());
    for f in &files {
        snaps.push(read_snapshot(f)?);
    }
    snaps.sort_by(|a, b| a.time.total_cmp(&b.time));
    let s = snaps[0].s;
    let grid = *snaps[0].field.grid();
    if snaps.iter().any(|x| x.s != s || x.field.grid() != &grid) {
        return Err(Error::GridMismatch.into());
    }
    let states = snaps
        .into_iter()
        .enumerate()
        .map(|(k, x)| State {
            t: x.time,
            u: x.field,
            step_count: k,
        })
        .collect();
    Ok((states, s))
}

fn diagnose(c: &Common, snapshot: &Path) -> Outcome {
    let l = load(c)?;
    let (states, s) = load_states(snapshot)?;
    let grid = *states[0].u.grid();
    let fp = FracParams::new(s, grid.dim())?;
    let solver = solver(&l, grid, &fp)?;
    let records = states.iter().map(|st| solver.record(st)).collect::<fracpme_core::Result<Vec<_>>>()?;
    let csv = l.out.join("diagnostics.csv");
    write_csv_file(&csv, &records)?;
    let first = &records[0];
    let last = records.last().expect("at least one snapshot");
    print_json(&json!({
        "snapshots": records.len(),
        "mass_drift": relative(last.mass, first.mass),
        "linf_final": last.linf,
        "support_radius_final": last.support_radius,
        "csv": csv,
    }));
    Ok(())
}

fn configured_barrier(l: &Loaded) -> std::result::Result<&Barrier, Failure> {
    l.cfg.barrier.as_ref().ok_or_else(|| {
        Error::Config {
            path: "barrier".into(),
            message: "this command needs a barrier section".into(),
        }
        .into()
    })
}

fn comparison_outcome(passed: bool, report: &Value) -> Outcome {
    if passed {
        Ok(())
    } else {
        Err(Failure::Check {
            kind: "comparison_failed",
            message: format!("barrier violated: {}", report["first_violation"]),
        })
    }
}

fn barrier_check(c: &Common, snapshot: &Path) -> Outcome {
    let l = load(c)?;
    let (states, _) = load_states(snapshot)?;
    let (passed, report) = match configured_barrier(&l)? {
        Barrier::Exponential(e) => {
            let r = check_above_states(&states, 0.0, &UpperBarrier::Exponential(e.clone()))?;
            (r.passed, serde_json::to_value(&r).expect("report serializes"))
        }
        Barrier::Parabola(p) => {
            let r = check_above_states(&states, 0.0, &UpperBarrier::Parabola(p.clone()))?;
            (r.passed, serde_json::to_value(&r).expect("report serializes"))
        }
        Barrier::Subsolution(b) => {
            let r = check_below_states(&states, 0.0, b)?;
            (r.comparison.passed, serde_json::to_value(&r).expect("report serializes"))
        }
    };
    write_json(&l.out.join("barrier_check.json"), &report)?;
    print_json(&report);
    let flat = report.get("comparison").unwrap_or(&report);
    comparison_outcome(passed, flat)
}

/// Barrier implied by the datum when the config names none.
fn default_barrier(l: &Loaded, u0: &Field) -> std::result::Result<Barrier, Failure> {
    let grid = *u0.grid();
    match &l.cfg.initial_data {
        InitialData::TruncatedExponential { amplitude, rate, .. } => {
            Ok(Barrier::Exponential(ExponentialBarrier::new(*amplitude, *rate, 0.0)?))
        }
        InitialData::Parabola { level, curvature } => Ok(Barrier::Parabola(parabola_datum(grid, *level, *curvature)?.1)),
        InitialData::Bump { .. } => Ok(Barrier::Subsolution(SubsolutionBump::fit_under(u0, 1.0)?)),
        _ => Err(Error::Config {
            path: "barrier".into(),
            message: "no barrier configured and none implied by the initial datum".into(),
        }
        .into()),
    }
}

fn calibrate(c: &Common) -> Outcome {
    let l = load(c)?;
    let (grid, fp, u0) = initial(&l)?;
    let barrier = match &l.cfg.barrier {
        Some(b) => b.clone(),
        None => default_barrier(&l, &u0)?,
    };
    let cfg = l.cfg.solver_config();
    let upper = match &barrier {
        Barrier::Exponential(e) => Some(UpperBarrier::Exponential(e.clone())),
        Barrier::Parabola(p) => Some(UpperBarrier::Parabola(p.clone())),
        Barrier::Subsolution(_) => None,
    };
    let (traj, result) = if let Some(shape) = upper {
        let cal = calibrate_speed(&u0, &fp, &l.cfg.reg, &cfg, &shape)?;
        let result = json!({
            "family": barrier_family(&barrier),
            "c_min": cal.c_min,
            "barrier": shape.with_speed(cal.c_min),
            "report": cal.report,
        });
        (cal.trajectory, result)
    } else {
        let Barrier::Subsolution(bump) = &barrier else { unreachable!() };
        let traj = solver(&l, grid, &fp)?.run(&u0)?;
        let rep = check_below_states(&traj.snapshots, traj.clipped_mass, bump)?;
        let center_value = traj.snapshots.iter().map(|st| st.u.values()[center_cell(grid, bump)]).fold(f64::INFINITY, f64::min);
        let result = json!({
            "family": "subsolution",
            "decay": bump.decay,
            "decay_required": rep.decay_required,
            "report": rep.comparison,
            "min_value_at_center": center_value,
            "barrier": bump,
        });
        (traj, result)
    };
    write_json(&l.out.join("calibration.json"), &result)?;
    write_trajectory(&l, &traj, result.clone())?;
    print_json(&result);
    box_exit(&traj)
}

fn center_cell(grid: Grid, b: &SubsolutionBump) -> usize {
    grid.nearest_cell(&b.center[..grid.dim()]).unwrap_or(0)
}

fn barrier_family(b: &Barrier) -> &'static str {
    match b {
        Barrier::Exponential(_) => "exponential",
        Barrier::Parabola(_) => "parabola",
        Barrier::Subsolution(_) => "subsolution",
    }
}

fn sweep(c: &Common) -> Outcome {
    let l = load(c)?;
    let grid = l.cfg.grid()?;
    let cfg = l.cfg.solver_config();
    let sw = &l.cfg.sweep;
    let mut rows = Vec::new();
    let mut series_l = Vec::new();
    let mut series_a = Vec::new();
    for &s in &sw.s_values {
        let fp = FracParams::new(s, grid.dim())?;
        let fit = speed_scaling_fit(grid, &fp, &l.cfg.reg, &cfg, &sw.levels, &sw.curvatures)?;
        let log_pairs = |key: &dyn Fn(&fracpme_core::barriers::SpeedSample) -> Option<f64>| {
            let mut pts: Vec<(f64, f64)> = fit
                .samples
                .iter()
                .filter_map(|x| key(x).map(|k| (k.ln(), x.c_min.ln())))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            pts.into_iter().unzip::<f64, f64, Vec<f64>, Vec<f64>>()
        };
        let a_ref = fit.samples.iter().map(|x| x.curvature).find(|&a| a == 1.0).unwrap_or(sw.curvatures[0]);
        let l_ref = fit.samples.iter().map(|x| x.level).find(|&v| v == 1.0).unwrap_or(sw.levels[0]);
        let (xl, yl) = log_pairs(&|x| (x.curvature == a_ref).then_some(x.level));
        let (xa, ya) = log_pairs(&|x| (x.level == l_ref).then_some(x.curvature));
        series_l.push(Series::new(format!("s = {s}"), xl, yl));
        series_a.push(Series::new(format!("s = {s}"), xa, ya));
        rows.push(json!({
            "s": s,
            "exp_l": fit.exp_l,
            "exp_a": fit.exp_a,
            "expected_exp_l": 0.5 + s,
            "expected_exp_a": 0.5 - s,
            "samples": fit.samples,
        }));
    }
    let result = json!({ "fits": rows });
    write_json(&l.out.join("sweep.json"), &result)?;
    if l.cfg.outputs.emit_svg {
        let plots = l.out.join("plots");
        write_text(&plots.join("sweep_level.svg"), &line_plot("speed against level", "log L", "log C", &series_l))?;
        write_text(&plots.join("sweep_curvature.svg"), &line_plot("speed against curvature", "log a", "log C", &series_a))?;
    }
    print_json(&result);
    Ok(())
}

fn oracle_check(c: &Common, cases: usize) -> Outcome {
    let l = load(c)?;
    let grid = l.cfg.grid()?;
    let fp = l.cfg.frac_params()?;
    // Support radius 2w = X/8.
    let w = grid.half_length() / 16.0;
    let u = Field::from_fn(grid, |x| (-x.iter().map(|v| v * v).sum::<f64>() / (w * w)).exp());
    let d = cross_validate(&u, &fp, 2.0 * w)?;
    let hb = half_ball_property(l.cfg.seed, cases)?;
    let result = json!({
        "cross_validation": d,
        "tolerance": ORACLE_TOL,
        "half_ball": {
            "seed": hb.seed,
            "cases": hb.cases.len(),
            "failures": hb.failures(),
            "worst_relative_margin": hb.worst_relative_margin(),
            "tolerance": hb.tolerance,
        },
    });
    write_json(&l.out.join("oracle_check.json"), &json!({ "summary": result, "half_ball_cases": hb.cases }))?;
    print_json(&result);
    if d.max() > ORACLE_TOL {
        return Err(Failure::Check {
            kind: "oracle_mismatch",
            message: format!("spectral and quadrature operators differ by {:.3e} (> {ORACLE_TOL})", d.max()),
        });
    }
    if !hb.passed() {
        return Err(Failure::Check {
            kind: "half_ball_violation",
            message: format!("{} of {} configurations violate the half-ball bound", hb.failures(), hb.cases.len()),
        });
    }
    Ok(())
}

fn plot(c: &Common, csv: Option<PathBuf>, columns: &[String], snapshot: Option<PathBuf>) -> Outcome {
    let l = load(c)?;
    let plots = l.out.join("plots");
    let mut written = Vec::new();
    if let Some(snap) = snapshot {
        let (states, _) = load_states(&snap)?;
        write_profile(&plots, &states[0], states.last().expect("nonempty"))?;
        written.push(plots.join("profile.svg"));
    }
    let csv_path = match csv {
        Some(p) => Some(p),
        None => {
            let p = l.out.join("diagnostics.csv");
            (written.is_empty() || p.exists()).then_some(p)
        }
    };
    if let Some(p) = csv_path {
        let cols = read_csv_file(&p)?;
        written.extend(plot_columns(&plots, &cols, columns)?);
    }
    print_json(&json!({ "written": written }));
    Ok(())
}
