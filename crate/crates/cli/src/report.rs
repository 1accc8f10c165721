//! Text reports for `run`, `certify` and `solve-refs`.

use std::fmt::{self, Write as _};

use dcgrid_core::engine::{DisturbanceSchedule, PlanEntry};
use dcgrid_core::model::{equilibrium, equilibrium_duties};
use dcgrid_core::references::{bounds, check_admissible, energy_balance_check, solve_x4_star};
use dcgrid_core::stability::{certify_branch, BranchCertificate, BranchCircuit, MonitorConfig, MonitorReport, Verdict};
use dcgrid_core::{Disturbance, GainSet, GridParameters, ReferenceSet, Scenario, Trace};

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub bus_law: &'static str,
    pub steps: usize,
    pub final_t: f64,
    /// Final x1 − x1*, x4 − x4*, x9 − x9* against the last interval's references.
    pub final_errors: [f64; 3],
    pub max_abs_x9_error: f64,
    pub max_applied: [f64; 3],
    pub raw_min: [f64; 3],
    pub raw_max: [f64; 3],
    pub saturated_steps: [u64; 3],
    pub monitor: Option<MonitorReport>,
}

impl RunSummary {
    pub fn new(name: &str, scenario: &Scenario, trace: &Trace) -> Self {
        let last = trace.setpoints.last().map(|s| s.refs);
        let x = &trace.final_state.phys;
        let final_errors = last.map_or([f64::NAN; 3], |r| [x.x1 - r.x1_star, x.x4 - r.x4_star, x.x9 - r.x9_star]);
        let max_abs_x9_error = trace
            .records
            .iter()
            .map(|r| (r.state.phys.x9 - trace.setpoints[r.interval].refs.x9_star).abs())
            .fold(0.0, f64::max);
        let mut max_applied = [0.0f64; 3];
        for r in &trace.records {
            for (m, u) in max_applied.iter_mut().zip(r.duties.applied) {
                *m = m.max(u);
            }
        }
        Self {
            name: name.to_string(),
            bus_law: scenario.bus_law.name(),
            steps: trace.stats.steps,
            final_t: trace.final_t,
            final_errors,
            max_abs_x9_error,
            max_applied,
            raw_min: trace.stats.raw_min,
            raw_max: trace.stats.raw_max,
            saturated_steps: trace.stats.saturated_steps,
            monitor: trace.monitor(MonitorConfig::default()),
        }
    }

    pub fn violation_count(&self) -> usize {
        self.monitor.as_ref().map_or(0, |m| m.violation_count())
    }

    pub fn monitor_verdict(&self) -> String {
        self.monitor
            .as_ref()
            .map_or_else(|| "not available (no Lyapunov certificate)".to_string(), |m| m.summary())
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario: {}", self.name)?;
        writeln!(f, "bus law: {}", self.bus_law)?;
        writeln!(f, "steps: {} (t = {} s)", self.steps, self.final_t)?;
        writeln!(f, "final x1 - x1*: {:.6e} V", self.final_errors[0])?;
        writeln!(f, "final x4 - x4*: {:.6e} V", self.final_errors[1])?;
        writeln!(f, "final x9 - x9*: {:.6e} V", self.final_errors[2])?;
        writeln!(f, "max |x9 - x9*| (recorded): {:.6e} V", self.max_abs_x9_error)?;
        for i in 0..3 {
            writeln!(
                f,
                "u{}: max applied {:.6}, raw range [{:.6}, {:.6}], saturated steps {}",
                i + 1,
                self.max_applied[i],
                self.raw_min[i],
                self.raw_max[i],
                self.saturated_steps[i]
            )?;
        }
        writeln!(f, "Lyapunov monitor: {}", self.monitor_verdict())
    }
}

/// Outcome of `certify`: the printed report and the hard failures found.
#[derive(Debug, Clone, PartialEq)]
pub struct Certification {
    pub report: String,
    pub failures: Vec<String>,
}

impl Certification {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn branch_lines(out: &mut String, name: &str, c: &BranchCertificate, failures: &mut Vec<String>) {
    let k = c.coefficients;
    let _ = writeln!(
        out,
        "  {name}: p3 = {:.6e}, p2 = {:.6e}, p1 = {:.6e}, p0 = {:.6e}",
        k.p3, k.p2, k.p1, k.p0
    );
    let _ = writeln!(
        out,
        "    Routh (standard): {}, Routh (paper-literal): {}, min margin {:.3e}",
        c.routh.standard, c.routh.paper_literal, c.routh.min_margin
    );
    let _ = writeln!(out, "    spectral abscissa: {:.6e}", c.spectral_abscissa);
    match &c.form {
        Ok(form) => {
            let dims = if form.reduced { "2x2 [v, i] block" } else { "4x4" };
            let _ = writeln!(out, "    Lyapunov equation: solved ({dims}, Q = I)");
        }
        Err(e) => {
            let _ = writeln!(out, "    Lyapunov equation: failed ({e})");
            failures.push(format!("{name} Lyapunov equation: {e}"));
        }
    }
    if c.routh.standard == Verdict::Unstable {
        failures.push(format!("{name} branch is not Hurwitz"));
    }
}

fn interval_lines(
    out: &mut String,
    entry: &PlanEntry,
    schedule: &DisturbanceSchedule,
    p: &GridParameters,
    failures: &mut Vec<String>,
) -> Option<ReferenceSet> {
    let d = schedule.at(entry.valid_from);
    let b = bounds(&d, entry.x9_star, p);
    let _ = writeln!(
        out,
        "interval [{}, {}] s: V_PV = {}, V_B = {}, V_S = {}, R_L = {}",
        entry.valid_from,
        entry.valid_to,
        d.v_pv,
        d.v_b,
        d.v_s,
        d.r_load()
    );
    let _ = writeln!(out, "  γ1 = {:.9}, γ2 = {:.9}, β = {:.6}", b.gamma1, b.gamma2, b.beta);
    // Ordering and x1* first, with an in-range placeholder for x4*.
    let probe = ReferenceSet::new(entry.x1_star, b.x4_range.0, entry.x9_star);
    if let Err(e) = check_admissible(&probe, &d, p) {
        let _ = writeln!(out, "  FAIL: {e}");
        failures.push(format!("t = {}: {e}", entry.valid_from));
        return None;
    }
    let x4 = match entry.x4_star {
        Some(v) => v,
        None => match solve_x4_star(entry.x1_star, entry.x9_star, &d, p) {
            Ok(s) => s.x4_star,
            Err(e) => {
                let _ = writeln!(out, "  x4*: {e}");
                failures.push(format!("t = {}: {e}", entry.valid_from));
                return None;
            }
        },
    };
    let refs = ReferenceSet::new(entry.x1_star, x4, entry.x9_star).with_window(entry.valid_from, entry.valid_to);
    let _ = writeln!(
        out,
        "  x1* = {} in [{:.6}, {:.6}]: {}",
        refs.x1_star,
        b.x1_range.0,
        b.x1_range.1,
        yes_no(b.x1_ok(refs.x1_star))
    );
    let _ = writeln!(
        out,
        "  x4* = {:.6} in [{:.6}, {:.6}]: {}",
        refs.x4_star,
        b.x4_range.0,
        b.x4_range.1,
        yes_no(b.x4_ok(refs.x4_star))
    );
    let ordered = refs.x9_star > d.v_pv.max(d.v_b) && refs.x9_star < d.v_s;
    let _ = writeln!(out, "  x9* = {} with max(V_PV,V_B) < x9* < V_S: {}", refs.x9_star, yes_no(ordered));
    if let Err(e) = check_admissible(&refs, &d, p) {
        let _ = writeln!(out, "  FAIL: {e}");
        failures.push(format!("t = {}: {e}", entry.valid_from));
    }
    match equilibrium(&refs, &d, p).and_then(|eq| Ok((equilibrium_duties(&eq.state, &d, p)?, eq))) {
        Ok((u, eq)) => {
            let x = eq.state;
            let _ = writeln!(
                out,
                "  equilibrium: x2 = {:.6}, x3 = {:.6}, x5 = {:.6}, x6 = {:.6}",
                x.x2, x.x3, x.x5, x.x6
            );
            for (i, v) in u.raw.iter().enumerate() {
                let inside = (0.0..=1.0).contains(v);
                let _ = writeln!(out, "  u{}^e = {:.6} in [0,1]: {}", i + 1, v, yes_no(inside));
                if !inside {
                    failures.push(format!("t = {}: equilibrium duty u{} = {v} outside [0,1]", entry.valid_from, i + 1));
                }
            }
            for w in &eq.warnings {
                let _ = writeln!(out, "  warning: {w}");
            }
        }
        Err(e) => {
            let _ = writeln!(out, "  equilibrium: {e}");
            failures.push(format!("t = {}: {e}", entry.valid_from));
        }
    }
    Some(refs)
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Admissibility, equilibrium duties, branch stability and energy balance.
pub fn certify(scenario: &Scenario, sc_power_limit: f64) -> Certification {
    let p = &scenario.params;
    let g = &scenario.gains;
    let mut out = String::new();
    let mut failures = Vec::new();

    let mut plan = Vec::new();
    for entry in &scenario.plan.entries {
        if let Some(r) = interval_lines(&mut out, entry, &scenario.schedule, p, &mut failures) {
            plan.push(r);
        }
    }

    let _ = writeln!(out, "gains: {}", gain_list(g));
    let (pv_order, bat_order) = g.sufficient_ordering(p);
    let _ = writeln!(
        out,
        "sufficient orderings: K3 > K1 > 1/(R1C1): {}, K6 > K4 > 1/(R4C4): {}",
        yes_no(pv_order),
        yes_no(bat_order)
    );
    let _ = writeln!(out, "branch stability:");
    branch_lines(&mut out, "PV", &certify_branch(&g.pv(), &BranchCircuit::pv(p)), &mut failures);
    branch_lines(
        &mut out,
        "battery",
        &certify_branch(&g.battery(), &BranchCircuit::battery(p)),
        &mut failures,
    );

    let _ = writeln!(out, "energy balance (P_SC = {sc_power_limit} W):");
    match energy_balance_check(&plan, |t| scenario.schedule.at(t), p, sc_power_limit, 64) {
        Ok(rep) => {
            for i in &rep.intervals {
                let _ = writeln!(
                    out,
                    "  [{}, {}] s: |∫imbalance| = {:.6e} J, ½∫P_SC = {:.6e} J, margin {:.6e} J",
                    i.valid_from, i.valid_to, i.imbalance, i.capacity, i.margin
                );
            }
            let _ = writeln!(out, "  {}", if rep.pass { "pass" } else { "FAIL (sizing assumption violated)" });
        }
        Err(e) => {
            let _ = writeln!(out, "  not evaluated: {e}");
        }
    }
    if failures.is_empty() {
        let _ = writeln!(out, "verdict: all checks pass");
    } else {
        let _ = writeln!(out, "verdict: {} hard failure(s)", failures.len());
    }
    Certification { report: out, failures }
}

fn gain_list(g: &GainSet) -> String {
    g.named_values()
        .iter()
        .map(|(n, v)| format!("{n} = {v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Result of `solve-refs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRefs {
    pub report: String,
    pub x4_star: f64,
}

pub fn solve_refs(x1_star: f64, x9_star: f64, d: &Disturbance, p: &GridParameters) -> Result<SolveRefs, String> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "V_PV = {}, V_B = {}, V_S = {}, R_L = {}, x1* = {}, x9* = {}",
        d.v_pv,
        d.v_b,
        d.v_s,
        d.r_load(),
        x1_star,
        x9_star
    );
    let sol = solve_x4_star(x1_star, x9_star, d, p).map_err(|e| format!("{out}{e}"))?;
    for r in &sol.roots {
        let _ = writeln!(out, "root x4 = {:.9}: admissible {}", r.x4, yes_no(r.admissible));
    }
    let _ = writeln!(out, "x4* = {:.9}", sol.x4_star);
    if let Some(a) = sol.alternative {
        let _ = writeln!(out, "alternative admissible root: {a:.9}");
    }
    let refs = ReferenceSet::new(x1_star, sol.x4_star, x9_star);
    let eq = equilibrium(&refs, d, p).map_err(|e| format!("{out}{e}"))?;
    let x = eq.state;
    let _ = writeln!(
        out,
        "equilibrium: x1 = {:.6}, x2 = {:.6}, x3 = {:.6}, x4 = {:.6}, x5 = {:.6}, x6 = {:.6}, x7 = {:.6}, x8 = {:.6}, x9 = {:.6}",
        x.x1, x.x2, x.x3, x.x4, x.x5, x.x6, x.x7, x.x8, x.x9
    );
    let u = equilibrium_duties(&x, d, p).map_err(|e| format!("{out}{e}"))?;
    let _ = writeln!(out, "duties: u1 = {:.6}, u2 = {:.6}, u3 = {:.6}", u.raw[0], u.raw[1], u.raw[2]);
    Ok(SolveRefs {
        report: out,
        x4_star: sol.x4_star,
    })
}
