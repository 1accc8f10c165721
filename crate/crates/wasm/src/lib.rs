//! WebAssembly entry points for the static demo page in `www/`.
//!
//! Three operations are exposed: a load-step simulation, the battery
//! reference solver and a gain certificate. Everything crosses the boundary
//! as numbers, strings and `Float64Array`s.

use dcgrid_core::engine::{ReferencePlan, Signal};
use dcgrid_core::model::{equilibrium, equilibrium_duties};
use dcgrid_core::references::{check_admissible, solve_x4_star};
use dcgrid_core::stability::{certify_branch, BranchCircuit, MonitorConfig, Verdict};
use dcgrid_core::{simulate, BusLaw, Disturbance, GainSet, GridParameters, ReferenceSet, Scenario};
use wasm_bindgen::prelude::*;

/// Sampled trajectory of a load-step run.
#[wasm_bindgen]
#[derive(Debug, Clone, Default)]
pub struct LoadStepRun {
    error: Option<String>,
    t: Vec<f64>,
    x1: Vec<f64>,
    x4: Vec<f64>,
    x9: Vec<f64>,
    u: [Vec<f64>; 3],
    monitor: String,
}

#[wasm_bindgen]
impl LoadStepRun {
    /// Empty when the run succeeded.
    pub fn error(&self) -> String {
        self.error.clone().unwrap_or_default()
    }

    pub fn t(&self) -> Vec<f64> {
        self.t.clone()
    }

    pub fn x1(&self) -> Vec<f64> {
        self.x1.clone()
    }

    pub fn x4(&self) -> Vec<f64> {
        self.x4.clone()
    }

    pub fn x9(&self) -> Vec<f64> {
        self.x9.clone()
    }

    /// Applied duty `which` (1, 2 or 3).
    pub fn duty(&self, which: usize) -> Vec<f64> {
        self.u.get(which.wrapping_sub(1)).cloned().unwrap_or_default()
    }

    pub fn monitor(&self) -> String {
        self.monitor.clone()
    }
}

/// Steps the load from `r_before` to `r_after` at `t_step`; references are
/// re-solved at the step when `resolve` is set. Tuned gains, h = 1 µs,
/// samples every 0.5 ms.
#[wasm_bindgen]
pub fn simulate_load_step(r_before: f64, r_after: f64, t_step: f64, t_end: f64, resolve: bool, centred: bool) -> LoadStepRun {
    let d = Disturbance::new(800.0, 600.0, 1500.0, r_before);
    let mut sc = Scenario::constant(GainSet::tuned(), d, 780.0, 1000.0, t_end);
    sc.schedule.r_load = Signal::knots(vec![(0.0, r_before), (t_step, r_before), (t_step, r_after)]);
    if resolve && t_step > 0.0 && t_step < t_end {
        sc.plan = ReferencePlan::periodic(t_step, t_end, 1000.0, &[780.0], None);
        sc.plan.entries.truncate(2);
        sc.plan.entries[1].valid_to = t_end;
    }
    sc.record_every = 500;
    sc.warm_start = true;
    sc.bus_law = if centred { BusLaw::Centred } else { BusLaw::Printed };
    if let Err(e) = sc.validate() {
        return LoadStepRun {
            error: Some(e.to_string()),
            ..Default::default()
        };
    }
    match simulate(&sc) {
        Ok(tr) => {
            let mut run = LoadStepRun {
                monitor: tr
                    .monitor(MonitorConfig::default())
                    .map(|m| m.summary())
                    .unwrap_or_default(),
                ..Default::default()
            };
            for r in &tr.records {
                run.t.push(r.t);
                run.x1.push(r.state.phys.x1);
                run.x4.push(r.state.phys.x4);
                run.x9.push(r.state.phys.x9);
                for i in 0..3 {
                    run.u[i].push(r.duties.applied[i]);
                }
            }
            run
        }
        Err(e) => LoadStepRun {
            error: Some(e.to_string()),
            ..Default::default()
        },
    }
}

/// Battery reference and equilibrium duties for one operating point.
#[wasm_bindgen]
#[derive(Debug, Clone, Default)]
pub struct ReferenceSolution {
    error: Option<String>,
    x4_star: f64,
    duties: [f64; 3],
}

#[wasm_bindgen]
impl ReferenceSolution {
    pub fn error(&self) -> String {
        self.error.clone().unwrap_or_default()
    }

    pub fn x4_star(&self) -> f64 {
        self.x4_star
    }

    pub fn duties(&self) -> Vec<f64> {
        self.duties.to_vec()
    }
}

#[wasm_bindgen]
pub fn solve_references(x1_star: f64, x9_star: f64, v_pv: f64, v_b: f64, v_s: f64, r_load: f64) -> ReferenceSolution {
    let p = GridParameters::table();
    let d = Disturbance::new(v_pv, v_b, v_s, r_load);
    let fail = |e: dcgrid_core::GridError| ReferenceSolution {
        error: Some(e.to_string()),
        ..Default::default()
    };
    let solve = || {
        d.validate()?;
        let x4 = solve_x4_star(x1_star, x9_star, &d, &p)?.x4_star;
        let refs = ReferenceSet::new(x1_star, x4, x9_star);
        check_admissible(&refs, &d, &p)?;
        let eq = equilibrium(&refs, &d, &p)?;
        Ok((x4, equilibrium_duties(&eq.state, &d, &p)?))
    };
    match solve() {
        Ok((x4, u)) => ReferenceSolution {
            error: None,
            x4_star: x4,
            duties: u.raw,
        },
        Err(e) => fail(e),
    }
}

/// Stability verdicts for one gain set.
#[wasm_bindgen]
#[derive(Debug, Clone, Default)]
pub struct GainCertificate {
    error: Option<String>,
    verdicts: [String; 2],
    abscissa: [f64; 2],
    lyapunov: [bool; 2],
}

#[wasm_bindgen]
impl GainCertificate {
    pub fn error(&self) -> String {
        self.error.clone().unwrap_or_default()
    }

    /// Routh verdict of branch 0 (PV) or 1 (battery).
    pub fn verdict(&self, branch: usize) -> String {
        self.verdicts.get(branch).cloned().unwrap_or_default()
    }

    pub fn spectral_abscissa(&self, branch: usize) -> f64 {
        self.abscissa.get(branch).copied().unwrap_or(f64::NAN)
    }

    pub fn lyapunov_solved(&self, branch: usize) -> bool {
        self.lyapunov.get(branch).copied().unwrap_or(false)
    }

    /// Both branches strictly stable with a Lyapunov matrix.
    pub fn certified(&self) -> bool {
        self.error.is_none() && self.verdicts.iter().all(|v| v == "stable") && self.lyapunov.iter().all(|&b| b)
    }
}

/// Gains in the order k1, kbar1, k1a, k3, kbar3, k3a, k4, kbar4, k4a, k6,
/// kbar6, k6a, k7, k8.
#[wasm_bindgen]
pub fn certify_gains(gains: &[f64]) -> GainCertificate {
    let Ok(k) = <[f64; 14]>::try_from(gains) else {
        return GainCertificate {
            error: Some(format!("expected 14 gains, got {}", gains.len())),
            ..Default::default()
        };
    };
    let g = GainSet {
        k1: k[0],
        kbar1: k[1],
        k1a: k[2],
        k3: k[3],
        kbar3: k[4],
        k3a: k[5],
        k4: k[6],
        kbar4: k[7],
        k4a: k[8],
        k6: k[9],
        kbar6: k[10],
        k6a: k[11],
        k7: k[12],
        k8: k[13],
    };
    if let Err(e) = g.validate() {
        return GainCertificate {
            error: Some(e.to_string()),
            ..Default::default()
        };
    }
    let p = GridParameters::table();
    let certs = [
        certify_branch(&g.pv(), &BranchCircuit::pv(&p)),
        certify_branch(&g.battery(), &BranchCircuit::battery(&p)),
    ];
    let verdict = |v: Verdict| v.to_string();
    GainCertificate {
        error: None,
        verdicts: [verdict(certs[0].routh.standard), verdict(certs[1].routh.standard)],
        abscissa: [certs[0].spectral_abscissa, certs[1].spectral_abscissa],
        lyapunov: [certs[0].form.is_ok(), certs[1].form.is_ok()],
    }
}

/// The gains used by the shipped scenarios, in `certify_gains` order.
#[wasm_bindgen]
pub fn tuned_gains() -> Vec<f64> {
    GainSet::tuned().named_values().iter().map(|(_, v)| *v).collect()
}
