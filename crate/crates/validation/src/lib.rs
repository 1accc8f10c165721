//! Acceptance checks run by the `acceptance` test target.
//!
//! Each check returns an [`Outcome`] with a verdict, a one-line measurement
//! and extra diagnostic lines. Random draws use fixed ChaCha seeds.

use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use dcgrid_core::audit;
use dcgrid_core::engine::{rk4_step, InitialCondition};
use dcgrid_core::model::{equilibrium, equilibrium_duties, plant_rhs};
use dcgrid_core::references::{bounds, check_admissible, solve_x4_star};
use dcgrid_core::stability::{lyapunov_solve, routh_stable, MonitorConfig, QuarticCoefficients, Verdict};
use dcgrid_core::{
    simulate, BusLaw, Disturbance, GainSet, GridError, GridParameters, PhysicalState, ReferenceSet, Scenario, Trace,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub number: u8,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub notes: Vec<String>,
    pub elapsed: Duration,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {} {}: {} ({}; {:.2} s)",
            self.number,
            if self.pass { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.elapsed.as_secs_f64()
        )?;
        for n in &self.notes {
            write!(f, "\n    {n}")?;
        }
        Ok(())
    }
}

const X1_STAR: f64 = 780.0;
const X9_STAR: f64 = 1000.0;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn law_name(law: BusLaw) -> &'static str {
    match law {
        BusLaw::Printed => "printed bus law",
        BusLaw::Centred => "centred bus law",
    }
}

fn default_equilibrium() -> PhysicalState {
    let p = GridParameters::table();
    let d = Disturbance::default();
    let x4 = solve_x4_star(X1_STAR, X9_STAR, &d, &p).expect("default load is admissible").x4_star;
    equilibrium(&ReferenceSet::new(X1_STAR, x4, X9_STAR), &d, &p)
        .expect("default equilibrium exists")
        .state
}

/// Bus current balance `(x2−x9)/R2 + (x5−x9)/R5 − x9/R_L`.
fn bus_current_residual(x: &PhysicalState, d: &Disturbance, p: &GridParameters) -> f64 {
    (x.x2 - x.x9) / p.r2 + (x.x5 - x.x9) / p.r5 - x.x9 * d.g_load
}

/// Triples drawn uniformly from the admissible box; the load that balances
/// the bus is implied by the triple.
pub fn equilibrium_fixed_point(seed: u64, count: usize) -> Outcome {
    let start = Instant::now();
    let p = GridParameters::table();
    let mut rng = rng(seed);
    let (mut accepted, mut drawn, mut worst) = (0usize, 0usize, 0.0f64);
    let mut load_range = (f64::INFINITY, 0.0f64);
    while accepted < count && drawn < 100_000 {
        drawn += 1;
        let x9 = rng.random_range(801.0..1499.0);
        let mut d = Disturbance::new(800.0, 600.0, 1500.0, 10.0);
        let b = bounds(&d, x9, &p);
        let x1 = rng.random_range(b.x1_range.0..b.x1_range.1);
        let x4 = rng.random_range(b.x4_range.0..b.x4_range.1);
        let refs = ReferenceSet::new(x1, x4, x9);
        let Ok(eq) = equilibrium(&refs, &d, &p) else { continue };
        d.g_load = 0.0;
        let g = bus_current_residual(&eq.state, &d, &p) / x9;
        if !(g > 0.0) {
            continue;
        }
        d.g_load = g;
        if check_admissible(&refs, &d, &p).is_err() {
            continue;
        }
        let Ok(u) = equilibrium_duties(&eq.state, &d, &p) else { continue };
        if u.raw.iter().any(|v| !(0.0..=1.0).contains(v)) {
            continue;
        }
        let r = plant_rhs(&eq.state, u.raw, &d, &p).scale() / eq.state.scale();
        worst = worst.max(r);
        load_range = (load_range.0.min(1.0 / g), load_range.1.max(1.0 / g));
        accepted += 1;
    }
    let elapsed = start.elapsed();
    Outcome {
        number: 1,
        title: "equilibrium fixed point",
        pass: accepted == count && worst < 1e-6 && elapsed.as_secs_f64() < 1.0,
        detail: format!("max ‖rhs‖∞/scale = {worst:.3e} over {accepted} triples"),
        notes: vec![format!(
            "{drawn} draws; implied R_L from {:.3} Ω to {:.3} Ω",
            load_range.0, load_range.1
        )],
        elapsed,
    }
}

/// Log-uniform loads; draws outside Ω_RL are rejected by the solver.
pub fn reference_round_trip(seed: u64, count: usize) -> Outcome {
    let start = Instant::now();
    let p = GridParameters::table();
    let mut rng = rng(seed);
    let (mut accepted, mut rejected, mut worst) = (0usize, 0usize, 0.0f64);
    while accepted < count && accepted + rejected < 100_000 {
        let r_load = 10f64.powf(rng.random_range(-1.0..4.0));
        let x1 = rng.random_range(700.0..800.0);
        let d = Disturbance::new(800.0, 600.0, 1500.0, r_load);
        let Ok(sol) = solve_x4_star(x1, X9_STAR, &d, &p) else {
            rejected += 1;
            continue;
        };
        let refs = ReferenceSet::new(x1, sol.x4_star, X9_STAR);
        let Ok(eq) = equilibrium(&refs, &d, &p) else {
            rejected += 1;
            continue;
        };
        let load_current = X9_STAR * d.g_load;
        worst = worst.max(bus_current_residual(&eq.state, &d, &p).abs() / load_current);
        accepted += 1;
    }
    let elapsed = start.elapsed();
    Outcome {
        number: 2,
        title: "reference round-trip",
        pass: accepted == count && worst < 1e-6 && elapsed.as_secs_f64() < 1.0,
        detail: format!("max relative current imbalance = {worst:.3e} over {accepted} loads"),
        notes: vec![format!("{rejected} draws rejected as outside Ω_RL")],
        elapsed,
    }
}

/// One perturbed start and its outcome.
#[derive(Debug)]
pub struct ConvergenceRun {
    pub factors: [f64; 9],
    pub trace: Result<Trace, GridError>,
}

/// Runs from the default equilibrium with every physical component scaled
/// by a factor in [0.95, 1.05].
#[derive(Debug)]
pub struct ConvergenceBatch {
    pub law: BusLaw,
    pub xe: PhysicalState,
    pub runs: Vec<ConvergenceRun>,
    pub elapsed: Duration,
}

pub fn convergence_batch(law: BusLaw, seed: u64, count: usize, t_end: f64) -> ConvergenceBatch {
    let start = Instant::now();
    let mut rng = rng(seed);
    let runs = (0..count)
        .map(|_| {
            let mut factors = [1.0; 9];
            for f in factors.iter_mut() {
                *f = 1.0 + rng.random_range(-0.05..0.05);
            }
            let mut sc = Scenario::constant(GainSet::tuned(), Disturbance::default(), X1_STAR, X9_STAR, t_end);
            sc.initial = InitialCondition::ScaledEquilibrium(factors);
            sc.warm_start = true;
            sc.bus_law = law;
            sc.record_every = 100;
            ConvergenceRun {
                factors,
                trace: simulate(&sc),
            }
        })
        .collect();
    ConvergenceBatch {
        law,
        xe: default_equilibrium(),
        runs,
        elapsed: start.elapsed(),
    }
}

struct BatchStats {
    converged: usize,
    duties_inside: usize,
    failed: Vec<String>,
    worst_error: f64,
    raw_min: [f64; 3],
    raw_max: [f64; 3],
}

fn batch_stats(b: &ConvergenceBatch) -> BatchStats {
    let tol = 1e-3 * b.xe.scale();
    let mut s = BatchStats {
        converged: 0,
        duties_inside: 0,
        failed: Vec::new(),
        worst_error: 0.0,
        raw_min: [f64::INFINITY; 3],
        raw_max: [f64::NEG_INFINITY; 3],
    };
    for r in &b.runs {
        match &r.trace {
            Ok(tr) => {
                let err = tr.final_state.phys.max_abs_diff(&b.xe);
                s.worst_error = s.worst_error.max(err);
                if err < tol {
                    s.converged += 1;
                }
                let st = &tr.stats;
                if st.raw_min.iter().all(|&v| v >= 0.0) && st.raw_max.iter().all(|&v| v <= 1.0) {
                    s.duties_inside += 1;
                }
                for i in 0..3 {
                    s.raw_min[i] = s.raw_min[i].min(st.raw_min[i]);
                    s.raw_max[i] = s.raw_max[i].max(st.raw_max[i]);
                }
            }
            Err(e) => s.failed.push(e.to_string()),
        }
    }
    s
}

fn describe_batch(b: &ConvergenceBatch) -> (BatchStats, String, String) {
    let s = batch_stats(b);
    let n = b.runs.len();
    let summary = format!(
        "{}: {}/{n} converged, {}/{n} kept raw duties in [0,1], {} failed",
        law_name(b.law),
        s.converged,
        s.duties_inside,
        s.failed.len()
    );
    if s.failed.len() == n {
        return (s, summary, format!("{}: no run completed", law_name(b.law)));
    }
    let ranges = (0..3)
        .map(|i| format!("u{} [{:.4e}, {:.4e}]", i + 1, s.raw_min[i], s.raw_max[i]))
        .collect::<Vec<_>>()
        .join(", ");
    let detail = format!(
        "{}: worst final ‖x−x^e‖∞ = {:.3e} V (tolerance {:.3} V); raw duty ranges {ranges}",
        law_name(b.law),
        s.worst_error,
        1e-3 * b.xe.scale()
    );
    (s, summary, detail)
}

/// Judged on `judged`; `diagnostic` is reported alongside.
pub fn equilibrium_attraction(judged: &ConvergenceBatch, diagnostic: &ConvergenceBatch) -> Outcome {
    let (s, summary, detail) = describe_batch(judged);
    let n = judged.runs.len();
    let mut notes = vec![detail];
    if let Some(e) = s.failed.first() {
        notes.push(format!("{}: first failure: {e}", law_name(judged.law)));
    }
    let (_, d_summary, d_detail) = describe_batch(diagnostic);
    notes.push(d_summary);
    notes.push(d_detail);
    Outcome {
        number: 3,
        title: "convergence from ±5% starts",
        pass: s.converged == n && s.duties_inside == n && judged.elapsed.as_secs_f64() < 60.0,
        detail: summary,
        notes,
        elapsed: judged.elapsed,
    }
}

fn monitor_batch(b: &ConvergenceBatch) -> (usize, usize, usize, Vec<String>) {
    let (mut violations, mut unavailable, mut inconclusive) = (0, 0, 0);
    let mut lines = Vec::new();
    for (i, r) in b.runs.iter().enumerate() {
        match r.trace.as_ref().map(|tr| tr.monitor(MonitorConfig::default())) {
            Ok(Some(rep)) => {
                violations += rep.violation_count();
                if rep.inconclusive() {
                    inconclusive += 1;
                }
                if rep.violation_count() > 0 {
                    lines.push(format!("{} run {i}: {}", law_name(b.law), rep.summary()));
                }
            }
            _ => unavailable += 1,
        }
    }
    (violations, unavailable, inconclusive, lines)
}

pub fn lyapunov_monotonicity(judged: &ConvergenceBatch, diagnostic: &ConvergenceBatch) -> Outcome {
    let start = Instant::now();
    let (violations, unavailable, inconclusive, mut notes) = monitor_batch(judged);
    let (dv, du, di, dlines) = monitor_batch(diagnostic);
    notes.truncate(3);
    notes.push(format!(
        "{}: {dv} violation(s), {du} run(s) without a trace, {di} run(s) with saturated segments",
        law_name(diagnostic.law)
    ));
    notes.extend(dlines.into_iter().take(3));
    Outcome {
        number: 5,
        title: "Lyapunov monotonicity",
        pass: violations == 0 && unavailable == 0,
        detail: format!(
            "{}: {violations} violation(s), {unavailable} run(s) without a trace, {inconclusive} run(s) with saturated segments",
            law_name(judged.law)
        ),
        notes,
        elapsed: start.elapsed(),
    }
}

/// Largest bus deviations outside the post-event windows and in steady state.
#[derive(Debug, Clone, Copy)]
pub struct Regulation {
    pub transient: f64,
    pub steady: f64,
    pub steady_samples: usize,
}

pub fn run_regulation(law: BusLaw, t_end: f64) -> (Result<Regulation, String>, Duration) {
    let start = Instant::now();
    let ov = dcgrid_cli::scenario_file::Overrides {
        t_end: Some(t_end),
        record_every: Some(100),
        bus_law: Some(law),
        h: None,
    };
    let result = dcgrid_cli::load("paper-sec5", ov)
        .map_err(|e| e.to_string())
        .and_then(|ls| {
            let sc = ls.scenario;
            let events = sc.event_times();
            let varying = sc.varying_windows();
            let tr = simulate(&sc).map_err(|e| e.to_string())?;
            let mut reg = Regulation {
                transient: 0.0,
                steady: 0.0,
                steady_samples: 0,
            };
            let mut ends = events.clone();
            ends.push(sc.t_end + 1e-12);
            for r in &tr.records {
                let dev = (r.state.phys.x9 - X9_STAR).abs();
                if !events.iter().any(|&e| r.t >= e && r.t < e + 0.05) {
                    reg.transient = reg.transient.max(dev);
                }
                let settled = ends.iter().any(|&e| r.t >= e - 0.1 && r.t < e);
                let moving = varying.iter().any(|&(a, b)| r.t >= a && r.t <= b);
                if settled && !moving {
                    reg.steady = reg.steady.max(dev);
                    reg.steady_samples += 1;
                }
            }
            Ok(reg)
        });
    (result, start.elapsed())
}

fn describe_regulation(law: BusLaw, r: &Result<Regulation, String>) -> String {
    match r {
        Ok(r) => format!(
            "{}: max |x9−x9*| = {:.4} V outside post-event windows, {:.4} V over {} steady samples",
            law_name(law),
            r.transient,
            r.steady,
            r.steady_samples
        ),
        Err(e) => format!("{}: run failed: {e}", law_name(law)),
    }
}

pub fn section_five_regulation(judged: BusLaw, diagnostic: BusLaw) -> Outcome {
    let (r, elapsed) = run_regulation(judged, 2.0);
    let (d, _) = run_regulation(diagnostic, 2.0);
    let pass = matches!(r, Ok(ref r) if r.transient < 0.02 * X9_STAR && r.steady < 1e-3 * X9_STAR)
        && elapsed.as_secs_f64() < 60.0;
    Outcome {
        number: 4,
        title: "bus regulation over the 2 s paper-sec5 preset",
        pass,
        detail: describe_regulation(judged, &r),
        notes: vec![
            format!("limits {:.1} V and {:.1} V", 0.02 * X9_STAR, 1e-3 * X9_STAR),
            describe_regulation(diagnostic, &d),
        ],
        elapsed,
    }
}

pub fn routh_agreement(seed: u64, count: usize) -> Outcome {
    let start = Instant::now();
    let mut rng = rng(seed);
    let (mut mismatches, mut skipped, mut hurwitz) = (0usize, 0usize, 0usize);
    for _ in 0..count {
        let mut c = [0.0; 4];
        for v in c.iter_mut() {
            let m = rng.random_range(0.0..20.0);
            *v = if rng.random_bool(0.8) { m } else { -m };
        }
        let q = QuarticCoefficients {
            p3: c[0],
            p2: c[1],
            p1: c[2],
            p0: c[3],
        };
        let rep = routh_stable(&q);
        if rep.min_margin.abs() < 1e-9 {
            skipped += 1;
            continue;
        }
        let stable = q.roots().iter().all(|z| z.re < 0.0);
        hurwitz += stable as usize;
        if (rep.standard == Verdict::Stable) != stable {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        number: 6,
        title: "Routh test agrees with root solve",
        pass: mismatches == 0 && elapsed.as_secs_f64() < 1.0,
        detail: format!("{mismatches} disagreement(s) over {count} quartics"),
        notes: vec![format!("{hurwitz} Hurwitz, {skipped} inside the 1e-9 margin band")],
        elapsed,
    }
}

pub fn lyapunov_residual(seed: u64, count: usize) -> Outcome {
    let start = Instant::now();
    let mut rng = rng(seed);
    let q = DMatrix::<f64>::identity(4, 4);
    let (mut worst, mut failures, mut indefinite) = (0.0f64, 0usize, 0usize);
    for _ in 0..count {
        let mut a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-5.0..5.0));
        let abscissa = a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
        let shift = abscissa + rng.random_range(0.1..5.0);
        for i in 0..4 {
            a[(i, i)] -= shift;
        }
        match lyapunov_solve(&a, &q) {
            Ok(p) => {
                let res = a.transpose() * &p + &p * &a + &q;
                worst = worst.max(res.amax() / q.amax());
                if p.symmetric_eigenvalues().iter().any(|&l| l <= 0.0) {
                    indefinite += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        number: 7,
        title: "Lyapunov equation residual",
        pass: failures == 0 && indefinite == 0 && worst < 1e-9 && elapsed.as_secs_f64() < 1.0,
        detail: format!("max ‖AᵀP+PA+Q‖max/‖Q‖max = {worst:.3e} over {count} matrices"),
        notes: vec![format!("{failures} solve failure(s), {indefinite} non-positive-definite P")],
        elapsed,
    }
}

/// Near-equilibrium start with the bus slightly above its reference.
const SMOOTH_START: [f64; 9] = [1.002, 1.0, 1.0, 0.998, 1.0, 1.0, 1.0005, 1.0, 1.0005];

fn closed_loop_final(h: f64, t_end: f64, law: BusLaw) -> Result<[f64; 13], GridError> {
    let mut sc = Scenario::constant(GainSet::tuned(), Disturbance::default(), X1_STAR, X9_STAR, t_end);
    sc.h = h;
    sc.record_every = sc.steps();
    sc.initial = InitialCondition::ScaledEquilibrium(SMOOTH_START);
    sc.warm_start = true;
    sc.bus_law = law;
    simulate(&sc).map(|tr| tr.final_state.to_array())
}

/// Plant alone with the duties fixed at their equilibrium values.
fn plant_final(h: f64, t_end: f64) -> Result<[f64; 9], GridError> {
    let p = GridParameters::table();
    let d = Disturbance::default();
    let xe = default_equilibrium();
    let u = equilibrium_duties(&xe, &d, &p)?.raw;
    let mut y = xe.to_array();
    for (v, f) in y.iter_mut().zip(SMOOTH_START) {
        *v *= f;
    }
    let steps = (t_end / h).round() as usize;
    for k in 0..steps {
        y = rk4_step(
            |_, y: &[f64; 9]| Ok(plant_rhs(&PhysicalState::from_array(*y), u, &d, &p).to_array()),
            k as f64 * h,
            &y,
            h,
        )?;
    }
    Ok(y)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Observed order from final states at h, h/2 and h/4.
fn observed_order(finals: &[Vec<f64>]) -> (f64, f64, f64) {
    let e1 = max_diff(&finals[0], &finals[1]);
    let e2 = max_diff(&finals[1], &finals[2]);
    ((e1 / e2).log2(), e1, e2)
}

fn order_over<F>(steps: &[f64], mut run: F) -> Result<(f64, f64, f64), String>
where
    F: FnMut(f64) -> Result<Vec<f64>, GridError>,
{
    let finals = steps
        .iter()
        .map(|&h| run(h).map_err(|e| format!("h = {:.2} µs: {e}", h * 1e6)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(observed_order(&finals))
}

fn describe_order(label: &str, r: &Result<(f64, f64, f64), String>) -> String {
    match r {
        Ok((q, e1, e2)) => format!("{label}: order {q:.3} (differences {e1:.3e}, {e2:.3e})"),
        Err(e) => format!("{label}: {e}"),
    }
}

/// Judged on `law`; `other` and the fixed-duty plant are reported alongside.
pub fn integrator_order(law: BusLaw, other: BusLaw) -> Outcome {
    let start = Instant::now();
    let t_end = 0.1;
    let closed = |law: BusLaw| move |h: f64| closed_loop_final(h, t_end, law).map(|y| y.to_vec());
    let judged = order_over(&[4e-6, 2e-6, 1e-6], closed(law));
    let finer = order_over(&[2e-6, 1e-6, 0.5e-6], closed(law));
    let alt = order_over(&[2e-6, 1e-6, 0.5e-6], closed(other));
    let plant = order_over(&[1e-6, 0.5e-6, 0.25e-6], |h| plant_final(h, 1e-5).map(|y| y.to_vec()));
    Outcome {
        number: 8,
        title: "integrator convergence order",
        pass: matches!(judged, Ok((q, _, _)) if q >= 3.5),
        detail: describe_order(&format!("closed loop, {}, h = 4, 2, 1 µs", law_name(law)), &judged),
        notes: vec![
            describe_order(&format!("closed loop, {}, h = 2, 1, 0.5 µs", law_name(law)), &finer),
            describe_order(&format!("closed loop, {}, h = 2, 1, 0.5 µs", law_name(other)), &alt),
            describe_order("plant with fixed duties over 10 µs, h = 1, 0.5, 0.25 µs", &plant),
        ],
        elapsed: start.elapsed(),
    }
}

/// Writes the closed-form audit to `path` and reads it back.
pub fn formula_audit(path: &Path) -> Outcome {
    let start = Instant::now();
    let p = GridParameters::table();
    let result = audit::default_cases(&p)
        .and_then(|cases| audit::audit(&cases, &GainSet::tuned(), &p))
        .map_err(|e| e.to_string())
        .and_then(|rep| {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
            }
            std::fs::write(path, rep.to_markdown()).map_err(|e| e.to_string())?;
            let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
            let rows: Vec<_> = rep.cases.iter().flat_map(|c| &c.rows).chain(&rep.polynomial).collect();
            let nonzero = rows.iter().filter(|r| r.abs_diff().is_some_and(|d| d > 0.0)).count();
            Ok((rep.max_abs_diff(), rows.len(), nonzero, text.contains("| abs diff |")))
        });
    let (pass, detail) = match &result {
        Ok((max, rows, nonzero, table)) => (
            *table && *nonzero > 0 && *max > 0.0,
            format!("{nonzero} of {rows} rows differ, largest absolute difference {max:.6e}"),
        ),
        Err(e) => (false, e.clone()),
    };
    Outcome {
        number: 9,
        title: "closed-form audit report",
        pass,
        detail,
        notes: vec![format!("written to {}", path.display())],
        elapsed: start.elapsed(),
    }
}
