//! Library side of the `dcgrid` command: scenario files, presets, CSV traces,
//! plots and reports. `main.rs` only parses arguments and maps outcomes to
//! exit codes.

pub mod plots;
pub mod presets;
pub mod report;
pub mod scenario_file;
pub mod trace_csv;

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use dcgrid_core::{audit, simulate, GainSet, GridParameters};

use report::{Certification, RunSummary, SolveRefs};
use scenario_file::{LoadedScenario, Overrides, ScenarioFile};

/// Default scenario for `certify` and `solve-refs` without a file: table
/// values, default sources and load, proof gains.
pub const DEFAULT_SCENARIO: &str = "schema_version = 1\nname = \"defaults\"\n\n[simulation]\nt_end = 1.0\n\n[references]\nx9_star = 1000.0\nx1_star = 780.0\n";

/// A command failure, carrying its exit status.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    /// Parse or validation error (exit 1).
    Invalid(String),
    /// Integration failure (exit 2).
    Integration(String),
    /// Lyapunov monitor violations under `--strict-lyapunov` (exit 3).
    Lyapunov(String),
    /// Output could not be written (exit 1).
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Invalid(_) | Failure::Io(_) => 1,
            Failure::Integration(_) => 2,
            Failure::Lyapunov(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(m) | Failure::Integration(m) | Failure::Lyapunov(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

fn io_err(path: &Path, e: impl fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

/// Source text of a scenario given as a file path or a preset name.
pub fn scenario_source(spec: &str) -> Result<(String, String), Failure> {
    let path = Path::new(spec);
    if path.is_file() {
        let src = std::fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("{spec}: {e}")))?;
        return Ok((spec.to_string(), src));
    }
    match presets::source(spec).map_err(Failure::Invalid)? {
        Some(src) => Ok((format!("preset {spec}"), src)),
        None => Err(Failure::Invalid(format!("{spec}: no such file or preset"))),
    }
}

fn parse(origin: &str, src: &str) -> Result<ScenarioFile, Failure> {
    ScenarioFile::parse(src).map_err(|e| Failure::Invalid(format!("{origin}: {e}")))
}

/// Loads and fully validates a scenario.
pub fn load(spec: &str, ov: Overrides) -> Result<LoadedScenario, Failure> {
    let (origin, src) = scenario_source(spec)?;
    parse(&origin, &src)?
        .build(&src, ov)
        .map_err(|e| Failure::Invalid(format!("{origin}: {e}")))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub overrides: Overrides,
    pub strict_lyapunov: bool,
    pub no_plots: bool,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Runs a scenario and writes `trace.csv`, `references.csv`, `summary.txt`
/// and, unless disabled, the SVG figures into the output directory
/// (default `out/<name>`).
pub fn run(spec: &str, opts: &RunOptions) -> Result<RunOutcome, Failure> {
    let loaded = load(spec, opts.overrides)?;
    let trace = simulate(&loaded.scenario).map_err(|e| Failure::Integration(e.to_string()))?;
    let summary = RunSummary::new(&loaded.name, &loaded.scenario, &trace);

    let dir = opts.output.clone().unwrap_or_else(|| Path::new("out").join(&loaded.name));
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut files = Vec::new();

    let rows = trace_csv::rows(&trace);
    let trace_path = dir.join("trace.csv");
    let f = File::create(&trace_path).map_err(|e| io_err(&trace_path, e))?;
    trace_csv::write_trace(BufWriter::new(f), &rows).map_err(|e| io_err(&trace_path, e))?;
    files.push(trace_path.clone());

    let refs = trace_csv::reference_rows(&trace.setpoints);
    let refs_path = dir.join("references.csv");
    let f = File::create(&refs_path).map_err(|e| io_err(&refs_path, e))?;
    trace_csv::write_references(BufWriter::new(f), &refs).map_err(|e| io_err(&refs_path, e))?;
    files.push(refs_path.clone());

    if loaded.output.plots && !opts.no_plots {
        files.extend(plot_from_csv(&trace_path, &refs_path, &dir)?);
    }

    let summary_path = dir.join("summary.txt");
    std::fs::write(&summary_path, summary.to_string()).map_err(|e| io_err(&summary_path, e))?;
    files.push(summary_path);

    if (opts.strict_lyapunov || loaded.output.strict_lyapunov) && summary.violation_count() > 0 {
        return Err(Failure::Lyapunov(format!(
            "{summary}strict Lyapunov check failed; outputs written to {}",
            dir.display()
        )));
    }
    Ok(RunOutcome {
        summary,
        output_dir: dir,
        files,
    })
}

/// Regenerates the figures from existing CSV files.
pub fn plot_from_csv(trace_path: &Path, refs_path: &Path, dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let rows = trace_csv::read_trace(File::open(trace_path).map_err(|e| io_err(trace_path, e))?)
        .map_err(|e| io_err(trace_path, e))?;
    let refs = trace_csv::read_references(File::open(refs_path).map_err(|e| io_err(refs_path, e))?)
        .map_err(|e| io_err(refs_path, e))?;
    plots::write_all(dir, &rows, &refs).map_err(|e| io_err(dir, e))
}

/// Certification report. Only parse errors fail early; admissibility
/// problems are reported and listed in [`Certification::failures`].
pub fn certify(spec: Option<&str>) -> Result<Certification, Failure> {
    let (origin, src) = match spec {
        Some(s) => scenario_source(s)?,
        None => ("defaults".to_string(), DEFAULT_SCENARIO.to_string()),
    };
    let loaded = parse(&origin, &src)?
        .build_unchecked(&src, Overrides::default())
        .map_err(|e| Failure::Invalid(format!("{origin}: {e}")))?;
    Ok(report::certify(&loaded.scenario, loaded.sc_power_limit))
}

/// `x1*` given as a number or as `V_PV` (the PV source voltage).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum X1Choice {
    Value(f64),
    SourceVoltage,
}

impl std::str::FromStr for X1Choice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("v_pv") {
            return Ok(X1Choice::SourceVoltage);
        }
        s.parse()
            .map(X1Choice::Value)
            .map_err(|_| format!("'{s}' is neither a number nor V_PV"))
    }
}

/// Solves x4* for the scenario's sources at t = 0, optionally replacing the
/// load and x1*.
pub fn solve_refs(spec: Option<&str>, load: Option<f64>, x1: Option<X1Choice>) -> Result<SolveRefs, Failure> {
    let (origin, src) = match spec {
        Some(s) => scenario_source(s)?,
        None => ("defaults".to_string(), DEFAULT_SCENARIO.to_string()),
    };
    let loaded = parse(&origin, &src)?
        .build_unchecked(&src, Overrides::default())
        .map_err(|e| Failure::Invalid(format!("{origin}: {e}")))?;
    let sc = &loaded.scenario;
    let mut d = sc.schedule.at(0.0);
    if let Some(r) = load {
        if !(r > 0.0) {
            return Err(Failure::Invalid(format!("--load {r} must be positive")));
        }
        d.g_load = 1.0 / r;
    }
    let first = sc.plan.entries[0];
    let x1_star = match x1 {
        None => first.x1_star,
        Some(X1Choice::Value(v)) => v,
        Some(X1Choice::SourceVoltage) => d.v_pv,
    };
    report::solve_refs(x1_star, first.x9_star, &d, &sc.params).map_err(Failure::Invalid)
}

/// Markdown comparison of the printed closed forms with the exact equilibria.
pub fn audit_markdown() -> Result<String, Failure> {
    let p = GridParameters::table();
    let cases = audit::default_cases(&p).map_err(|e| Failure::Invalid(e.to_string()))?;
    let rep = audit::audit(&cases, &GainSet::tuned(), &p).map_err(|e| Failure::Invalid(e.to_string()))?;
    Ok(rep.to_markdown())
}
