use std::path::Path;
use std::process::{Command, Output};

use dcgrid_cli::scenario_file::Overrides;
use dcgrid_cli::{trace_csv, RunOptions};

fn dcgrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcgrid"))
        .args(args)
        .env_remove("DCGRID_PRESET_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join(name).display().to_string()
}

fn write_scenario(dir: &Path, body: &str) -> String {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const BASE: &str = "schema_version = 1\nname = \"t\"\n[simulation]\nt_end = 0.01\n";

#[test]
fn presets_list_shows_builtin_set() {
    let o = dcgrid(&["presets", "list"]);
    assert!(o.status.success());
    let names: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(names, ["equilibrium-hold", "step-load", "paper-sec5", "charge-discharge"]);
}

#[test]
fn preset_dir_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("tiny.toml"),
        format!("{BASE}[references]\nx9_star = 1000.0\nx1_star = 780.0\n"),
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dcgrid"))
        .args(["presets", "list"])
        .env("DCGRID_PRESET_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(stdout(&o).trim(), "tiny");
}

#[test]
fn equilibrium_hold_stays_put() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eq");
    let o = dcgrid(&["run", "equilibrium-hold", "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = trace_csv::read_trace(std::fs::File::open(out.join("trace.csv")).unwrap()).unwrap();
    let worst = rows.iter().map(|r| (r.x9 - 1000.0).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("Lyapunov monitor: pass"), "{summary}");
    for fig in dcgrid_cli::plots::FIGURES {
        assert!(out.join(format!("{fig}.svg")).is_file(), "{fig}");
    }
}

#[test]
fn csv_reproduces_the_trace_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        output: Some(dir.path().to_path_buf()),
        no_plots: true,
        overrides: Overrides {
            t_end: Some(0.05),
            record_every: Some(37),
            ..Default::default()
        },
        ..Default::default()
    };
    dcgrid_cli::run("step-load", &opts).unwrap();
    let written = trace_csv::read_trace(std::fs::File::open(dir.path().join("trace.csv")).unwrap()).unwrap();

    let loaded = dcgrid_cli::load("step-load", opts.overrides).unwrap();
    let trace = dcgrid_core::simulate(&loaded.scenario).unwrap();
    let expected = trace_csv::rows(&trace);
    assert_eq!(written.len(), expected.len());
    for (a, b) in written.iter().zip(&expected) {
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}

#[test]
fn plots_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        output: Some(dir.path().to_path_buf()),
        overrides: Overrides {
            t_end: Some(0.02),
            ..Default::default()
        },
        ..Default::default()
    };
    dcgrid_cli::run("charge-discharge", &opts).unwrap();
    let first = std::fs::read(dir.path().join("duties.svg")).unwrap();
    let again = tempfile::tempdir().unwrap();
    dcgrid_cli::plot_from_csv(&dir.path().join("trace.csv"), &dir.path().join("references.csv"), again.path())
        .unwrap();
    assert_eq!(first, std::fs::read(again.path().join("duties.svg")).unwrap());
}

#[test]
fn step_load_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcgrid_cli::run(
        "step-load",
        &RunOptions {
            output: Some(dir.path().to_path_buf()),
            no_plots: true,
            ..Default::default()
        },
    )
    .unwrap();
    let s = out.summary;
    assert!(s.final_errors.iter().all(|e| e.abs() < 1e-2), "{s}");
    assert!(s.max_abs_x9_error < 20.0, "{s}");
    assert_eq!(s.violation_count(), 0, "{s}");
}

#[test]
fn overloaded_scenario_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(
        dir.path(),
        &format!("{BASE}[disturbance]\nr_load = 0.01\n[references]\nx9_star = 1000.0\nx1_star = 780.0\n"),
    );
    let o = dcgrid(&["run", &path, "--no-plots", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("R_L outside Ω_RL"), "{err}");
    assert!(err.contains("line 5"), "{err}");
}

#[test]
fn unknown_key_is_line_anchored() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), &format!("{BASE}stepsize = 1e-6\n"));
    let o = dcgrid(&["run", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(dcgrid(&["run"]).status.code(), Some(1));
    assert_eq!(dcgrid(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dcgrid(&["--version"]).status.code(), Some(0));
}

#[test]
fn coarse_step_is_an_integration_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcgrid(&[
        "run",
        "equilibrium-hold",
        "--step",
        "4e-6",
        "--bus-law",
        "printed",
        "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stderr(&o).contains("integration diverged"), "{}", stderr(&o));
}

#[test]
fn strict_lyapunov_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = fixture("stale-references.toml");
    let o = dcgrid(&["run", &scenario, "--no-plots", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("violation(s)"), "{}", stdout(&o));
    let o = dcgrid(&[
        "run",
        &scenario,
        "--no-plots",
        "--strict-lyapunov",
        "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn certify_defaults_pass() {
    let o = dcgrid(&["certify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("u3^e = 0.666667 in [0,1]: yes"), "{text}");
    assert!(text.contains("γ1 = 0.090909091"), "{text}");
    assert!(text.contains("verdict: all checks pass"), "{text}");
}

#[test]
fn certify_rejects_bus_above_supercap() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), &format!("{BASE}[references]\nx9_star = 1600.0\nx1_star = 780.0\n"));
    let o = dcgrid(&["certify", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stdout(&o).contains("x9* must satisfy max(V_PV,V_B) < x9* < V_S"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn certify_rejects_low_pv_reference() {
    let dir = tempfile::tempdir().unwrap();
    let x1 = 0.5 * (1.0 / 11.0) * 800.0;
    let path = write_scenario(dir.path(), &format!("{BASE}[references]\nx9_star = 1000.0\nx1_star = {x1}\n"));
    let o = dcgrid(&["certify", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("x1* below γ1·V_PV"), "{}", stderr(&o));
}

fn x4_from(report: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix("x4* = "))
        .expect("x4* line")
        .parse()
        .unwrap()
}

#[test]
fn solve_refs_examples() {
    let o = dcgrid(&["solve-refs", "--load", "1e9", "--x1star", "V_PV"]);
    assert!(o.status.success());
    assert!((x4_from(&stdout(&o)) - 600.0).abs() < 1e-6);

    let o = dcgrid(&["solve-refs", "--load", "10", "--x1star", "780"]);
    assert!(o.status.success());
    assert!((x4_from(&stdout(&o)) - 608.7).abs() < 0.05);

    let o = dcgrid(&["solve-refs", "--load", "0.01"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("R_L outside Ω_RL"));
}

#[test]
fn audit_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reports").join("audit.md");
    let o = dcgrid(&["audit", "--output", path.to_str().unwrap()]);
    assert!(o.status.success());
    let md = std::fs::read_to_string(path).unwrap();
    assert!(md.contains("x5"), "{md}");
}
