use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fracpme(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracpme"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("stderr has a line");
    serde_json::from_str(line).expect("stderr is JSON")
}

const SMALL_GAUSSIAN: &str = r#"{"N": 128, "X": 6, "t_end": 0.5, "snapshot_stride": 20,
    "initial_data": {"family": "gaussian", "params": {"amplitude": 1, "width": 0.7}}}"#;

#[test]
fn zero_datum_gives_empty_dynamics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "zero.json",
        r#"{"N": 64, "X": 4, "t_end": 0.2, "initial_data": {"family": "zero"}}"#,
    );
    let out = dir.path().join("out");
    let o = fracpme(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("t,mass,linf"));
    let mut rows = 0;
    for line in lines {
        rows += 1;
        for v in line.split(',').skip(1) {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{line}");
        }
    }
    assert!(rows >= 2);
    assert!(out.join("summary.json").exists());
    assert!(out.join("plots/mass.svg").exists());
    assert!(std::fs::read_dir(out.join("snapshots")).unwrap().count() >= 4);
}

#[test]
fn invalid_configs_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (r#"{"dim": 1, "s": 0.6}"#, "2s < n"),
        (r#"{"delta": 1.5}"#, "delta"),
        (r#"{"grid": {"dim": 1, "cels": 4}}"#, "grid"),
    ];
    for (k, (text, needle)) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("bad{k}.json"), text);
        let o = fracpme(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{text}");
        let err = stderr_json(&o);
        assert!(err["kind"].is_string());
        assert!(err["message"].as_str().unwrap().contains(needle), "{err}");
    }
    let o = fracpme(&["run", "--preset", "nope"]);
    assert_eq!(o.status.code(), Some(1));
    let o = fracpme(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["kind"], "usage");
}

#[test]
fn deterministic_runs_are_bit_identical_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "g.json", SMALL_GAUSSIAN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = fracpme(&["--deterministic", "run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(
        std::fs::read(a.join("diagnostics.csv")).unwrap(),
        std::fs::read(b.join("diagnostics.csv")).unwrap()
    );
    let snaps: Vec<_> = std::fs::read_dir(a.join("snapshots")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(!snaps.is_empty());
    for name in &snaps {
        assert_eq!(
            std::fs::read(a.join("snapshots").join(name)).unwrap(),
            std::fs::read(b.join("snapshots").join(name)).unwrap()
        );
    }

    // Diagnostics recomputed from the stored snapshots match the run's CSV.
    let d = dir.path().join("d");
    let o = fracpme(&[
        "diagnose",
        "--config",
        &cfg,
        "--snapshot",
        a.join("snapshots").to_str().unwrap(),
        "--out",
        d.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(a.join("diagnostics.csv")).unwrap(),
        std::fs::read_to_string(d.join("diagnostics.csv")).unwrap()
    );
}

#[test]
fn plot_renders_one_svg_per_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "g.json", SMALL_GAUSSIAN);
    let run_out = dir.path().join("run");
    let o = fracpme(&["run", "--config", &cfg, "--out", run_out.to_str().unwrap()]);
    assert!(o.status.success());
    let p = dir.path().join("p");
    let o = fracpme(&[
        "plot",
        "--csv",
        run_out.join("diagnostics.csv").to_str().unwrap(),
        "--columns",
        "mass,l2",
        "--snapshot",
        run_out.join("snapshots").to_str().unwrap(),
        "--out",
        p.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut names: Vec<String> = std::fs::read_dir(p.join("plots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["l2.svg", "mass.svg", "profile.svg"]);
    let svg = std::fs::read_to_string(p.join("plots/mass.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline") && !svg.contains("href"));

    let o = fracpme(&["plot", "--csv", run_out.join("diagnostics.csv").to_str().unwrap(), "--columns", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn oracle_check_passes_at_the_reference_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "o.json", r#"{"dim": 1, "N": 256, "X": 20, "s": 0.25}"#);
    let o = fracpme(&["oracle-check", "--config", &cfg, "--cases", "20", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let d = &v["cross_validation"];
    for key in ["potential", "grad", "lap"] {
        assert!(d[key].as_f64().unwrap() <= 0.02, "{v}");
    }
    assert_eq!(v["half_ball"]["failures"], 0);
}

#[test]
fn barrier_check_fails_for_a_static_barrier_and_passes_after_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let base = r#""N": 512, "X": 20, "t_end": 1, "snapshot_stride": 1,
        "initial_data": {"family": "truncated_exponential", "params": {"amplitude": 2, "rate": 1, "cap": 1}}"#;
    let still = write_config(
        dir.path(),
        "still.json",
        &format!(r#"{{{base}, "barrier": {{"family": "exponential", "amplitude": 2, "rate": 1, "speed": 0}}}}"#),
    );
    let out = dir.path().join("cal");
    let o = fracpme(&["calibrate", "--config", &still, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cal: Value = serde_json::from_slice(&o.stdout).unwrap();
    let c_min = cal["c_min"].as_f64().unwrap();
    assert!(c_min > 0.0 && c_min.is_finite());

    let snaps = out.join("snapshots");
    let o = fracpme(&["barrier-check", "--config", &still, "--snapshot", snaps.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["kind"], "comparison_failed");

    let fast = write_config(
        dir.path(),
        "fast.json",
        &format!(r#"{{{base}, "barrier": {{"family": "exponential", "amplitude": 2, "rate": 1, "speed": {c_min}}}}}"#),
    );
    let o = fracpme(&["barrier-check", "--config", &fast, "--snapshot", snaps.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn box_exit_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "edge.json",
        r#"{"N": 64, "X": 2, "t_end": 50,
            "initial_data": {"family": "gaussian", "params": {"amplitude": 2, "width": 0.4}}}"#,
    );
    let o = fracpme(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["kind"], "box_exit");
    assert!(dir.path().join("o/summary.json").exists());
}

#[test]
fn help_exits_cleanly() {
    let o = fracpme(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["run", "diagnose", "barrier-check", "calibrate", "sweep", "oracle-check", "plot"] {
        assert!(text.contains(sub), "{sub}");
    }
}
