//! Comparison of the published closed forms against the residual-rooted
//! equilibria and the matrix-consistent characteristic polynomial.

use std::fmt::Write as _;

use crate::control::GainSet;
use crate::error::Result;
use crate::model::{self, Disturbance, GridParameters};
use crate::references::ReferenceSet;
use crate::stability::{self, BranchCircuit};

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub quantity: String,
    pub printed: Option<f64>,
    pub exact: f64,
}

impl AuditRow {
    pub fn abs_diff(&self) -> Option<f64> {
        self.printed.map(|v| (v - self.exact).abs())
    }

    pub fn rel_diff(&self) -> Option<f64> {
        self.abs_diff().map(|a| a / self.exact.abs().max(f64::MIN_POSITIVE))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditCase {
    pub refs: ReferenceSet,
    pub disturbance: Disturbance,
    pub rows: Vec<AuditRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub cases: Vec<AuditCase>,
    pub gains: GainSet,
    pub polynomial: Vec<AuditRow>,
}

impl AuditReport {
    pub fn max_abs_diff(&self) -> f64 {
        self.cases
            .iter()
            .flat_map(|c| c.rows.iter())
            .chain(self.polynomial.iter())
            .filter_map(AuditRow::abs_diff)
            .fold(0.0, f64::max)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Closed-form audit\n\n");
        s.push_str("Printed closed forms versus residual-rooted equilibria (Table parameters).\n\n");
        for c in &self.cases {
            let _ = writeln!(
                s,
                "## x1* = {}, x4* = {:.6}, x9* = {}, V_PV = {}, V_B = {}, R_L = {}\n",
                c.refs.x1_star,
                c.refs.x4_star,
                c.refs.x9_star,
                c.disturbance.v_pv,
                c.disturbance.v_b,
                c.disturbance.r_load()
            );
            write_rows(&mut s, &c.rows);
        }
        s.push_str("## Characteristic polynomial of the PV branch\n\n");
        let gains: Vec<String> = self.gains.named_values().iter().map(|(n, v)| format!("{n} = {v}")).collect();
        let _ = writeln!(s, "Gains: {}.\n", gains.join(", "));
        write_rows(&mut s, &self.polynomial);
        s
    }
}

fn write_rows(s: &mut String, rows: &[AuditRow]) {
    s.push_str("| quantity | printed | exact | abs diff | rel diff |\n|---|---|---|---|---|\n");
    for r in rows {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6e}"));
        let _ = writeln!(
            s,
            "| {} | {} | {:.9e} | {} | {} |",
            r.quantity,
            fmt(r.printed),
            r.exact,
            fmt(r.abs_diff()),
            fmt(r.rel_diff())
        );
    }
    s.push('\n');
}

pub fn audit_case(refs: &ReferenceSet, d: &Disturbance, p: &GridParameters) -> Result<AuditCase> {
    let eq = model::equilibrium(refs, d, p)?;
    let pf = eq.printed;
    let x3 = eq.state.x3;
    Ok(AuditCase {
        refs: *refs,
        disturbance: *d,
        rows: vec![
            AuditRow {
                quantity: "a2".into(),
                printed: Some(pf.a2),
                exact: (p.r01 - p.r02) * x3,
            },
            AuditRow {
                quantity: "x2".into(),
                printed: pf.x2,
                exact: eq.state.x2,
            },
            AuditRow {
                quantity: "x5".into(),
                printed: pf.x5,
                exact: eq.state.x5,
            },
        ],
    })
}

/// Runs the audit over the given operating points and gain set.
pub fn audit(cases: &[(ReferenceSet, Disturbance)], g: &GainSet, p: &GridParameters) -> Result<AuditReport> {
    let cases = cases
        .iter()
        .map(|(r, d)| audit_case(r, d, p))
        .collect::<Result<Vec<_>>>()?;
    let k = BranchCircuit::pv(p);
    let exact = stability::branch_char_poly(&g.pv(), &k);
    let printed = stability::branch_char_poly_printed(&g.pv(), &k);
    let names = ["p3", "p2", "p1", "p0"];
    let polynomial = names
        .iter()
        .zip(printed.as_array().iter().zip(exact.as_array()))
        .map(|(n, (pr, ex))| AuditRow {
            quantity: (*n).into(),
            printed: Some(*pr),
            exact: ex,
        })
        .collect();
    Ok(AuditReport {
        cases,
        gains: *g,
        polynomial,
    })
}

/// Default operating points: two PV references and two loads.
pub fn default_cases(p: &GridParameters) -> Result<Vec<(ReferenceSet, Disturbance)>> {
    let mut out = Vec::new();
    for &(x1, rl) in &[(780.0, 10.0), (790.0, 10.0), (780.0, 20.0)] {
        let d = Disturbance::new(800.0, 600.0, 1500.0, rl);
        let x4 = crate::references::solve_x4_star(x1, 1000.0, &d, p)?.x4_star;
        out.push((ReferenceSet::new(x1, x4, 1000.0), d));
    }
    Ok(out)
}
