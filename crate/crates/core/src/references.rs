//! Reference selection for one control interval: admissibility bounds, the
//! current-balance solve for the battery reference, and the supercapacitor
//! energy-balance sizing check.

use crate::error::{GridError, Result};
use crate::model::{self, Disturbance, GridParameters};

/// Targets held by the local controllers over `[valid_from, valid_to)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSet {
    pub x1_star: f64,
    pub x4_star: f64,
    pub x9_star: f64,
    pub valid_from: f64,
    pub valid_to: f64,
}

impl ReferenceSet {
    /// References valid for all time.
    pub fn new(x1_star: f64, x4_star: f64, x9_star: f64) -> Self {
        Self {
            x1_star,
            x4_star,
            x9_star,
            valid_from: 0.0,
            valid_to: f64::INFINITY,
        }
    }

    pub fn with_window(mut self, valid_from: f64, valid_to: f64) -> Self {
        self.valid_from = valid_from;
        self.valid_to = valid_to;
        self
    }

    pub fn duration(&self) -> f64 {
        self.valid_to - self.valid_from
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibleBounds {
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta: f64,
    pub x1_range: (f64, f64),
    pub x4_range: (f64, f64),
}

impl AdmissibleBounds {
    pub fn x1_ok(&self, x1: f64) -> bool {
        x1 >= self.x1_range.0 && x1 <= self.x1_range.1
    }

    pub fn x4_ok(&self, x4: f64) -> bool {
        x4 >= self.x4_range.0 && x4 <= self.x4_range.1
    }
}

pub fn bounds(d: &Disturbance, x9_star: f64, p: &GridParameters) -> AdmissibleBounds {
    let rho1 = p.r01 / p.r1;
    let rho2 = p.r04 / p.r4;
    let gamma1 = rho1 / (1.0 + rho1);
    let gamma2 = rho2 / (1.0 + rho2);
    let k = (p.r5 - p.r04) / p.r4;
    let beta = (x9_star + k * d.v_b) / (1.0 + k);
    AdmissibleBounds {
        gamma1,
        gamma2,
        beta,
        x1_range: (gamma1 * d.v_pv, d.v_pv),
        x4_range: (gamma2 * d.v_b, beta),
    }
}

/// Checks the ordering `max(V_PV, V_B) < x9* < V_S` and the x1*/x4* ranges.
pub fn check_admissible(refs: &ReferenceSet, d: &Disturbance, p: &GridParameters) -> Result<()> {
    let b = bounds(d, refs.x9_star, p);
    if !(refs.x9_star > d.v_pv.max(d.v_b) && refs.x9_star < d.v_s) {
        return Err(GridError::Inadmissible(format!(
            "x9* must satisfy max(V_PV,V_B) < x9* < V_S (x9* = {}, V_PV = {}, V_B = {}, V_S = {})",
            refs.x9_star, d.v_pv, d.v_b, d.v_s
        )));
    }
    if refs.x1_star < b.x1_range.0 {
        return Err(GridError::Inadmissible(format!(
            "x1* below γ1·V_PV ({} < {})",
            refs.x1_star, b.x1_range.0
        )));
    }
    if refs.x1_star > b.x1_range.1 {
        return Err(GridError::Inadmissible(format!(
            "x1* above V_PV ({} > {})",
            refs.x1_star, b.x1_range.1
        )));
    }
    if !b.x4_ok(refs.x4_star) {
        return Err(GridError::Inadmissible(format!(
            "x4* = {} outside [γ2·V_B, β] = [{}, {}]",
            refs.x4_star, b.x4_range.0, b.x4_range.1
        )));
    }
    Ok(())
}

/// One root of the battery-reference quadratic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct X4Root {
    pub x4: f64,
    pub admissible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct X4Solution {
    pub x4_star: f64,
    /// The other admissible root, if the quadratic has two.
    pub alternative: Option<f64>,
    pub roots: Vec<X4Root>,
    pub x2_star: f64,
    pub x5_star: f64,
}

/// Solves the bus current balance for the battery reference x4*.
///
/// x2* follows from the PV references; the balance then fixes x5*, and the
/// battery line's steady state gives a quadratic in the battery current
/// `i = (V_B − x4*)/R4`:  `i·(x4* − R04·i) = x5*(x5* − x9*)/R5`.
/// Failure to find a root inside `[γ2·V_B, β]` is exactly non-membership of
/// the load in Ω_RL.
pub fn solve_x4_star(x1_star: f64, x9_star: f64, d: &Disturbance, p: &GridParameters) -> Result<X4Solution> {
    let probe = ReferenceSet::new(x1_star, d.v_b, x9_star);
    let x2_star = model::equilibrium(&probe, d, p)?.state.x2;
    let x5_star = x9_star + p.r5 * (x9_star * d.g_load - (x2_star - x9_star) / p.r2);
    if !(x5_star > 0.0) {
        return Err(GridError::OutsideOmegaRl(format!(
            "required battery-side voltage x5* = {x5_star:.6} is not positive"
        )));
    }
    let battery_power = x5_star * (x5_star - x9_star) / p.r5;

    // With s = V_B − x4*: (1+ρ)/R4·s² − V_B/R4·s + P = 0, ρ = R04/R4.
    let rho = p.r04 / p.r4;
    let b = -d.v_b / (1.0 + rho);
    let c = battery_power * p.r4 / (1.0 + rho);
    let (s_plus, s_minus) = model::monic_quadratic_roots(b, c).ok_or_else(|| {
        GridError::OutsideOmegaRl(format!(
            "battery cannot deliver {battery_power:.3} W at any terminal voltage"
        ))
    })?;

    let bnd = bounds(d, x9_star, p);
    let mut roots: Vec<X4Root> = [s_minus, s_plus]
        .iter()
        .map(|s| {
            let x4 = d.v_b - s;
            X4Root {
                x4,
                admissible: x4 > 0.0 && bnd.x4_ok(x4),
            }
        })
        .collect();
    roots.sort_by(|a, b| (a.x4 - d.v_b).abs().total_cmp(&(b.x4 - d.v_b).abs()));
    let mut admissible = roots.iter().filter(|r| r.admissible).map(|r| r.x4);
    let x4_star = admissible.next().ok_or_else(|| {
        GridError::OutsideOmegaRl(format!(
            "no battery reference in [{:.6}, {:.6}] (roots {:.6}, {:.6})",
            bnd.x4_range.0, bnd.x4_range.1, roots[0].x4, roots[1].x4
        ))
    })?;
    let alternative = admissible.next();
    Ok(X4Solution {
        x4_star,
        alternative,
        roots,
        x2_star,
        x5_star,
    })
}

/// Net power injected into the bus (PV + battery − load) at the equilibrium
/// implied by `refs` under disturbance `d`.
pub fn bus_power_imbalance(refs: &ReferenceSet, d: &Disturbance, p: &GridParameters) -> Result<f64> {
    let xe = model::equilibrium(refs, d, p)?.state;
    let x9 = refs.x9_star;
    let p_pv = x9 * (xe.x2 - x9) / p.r2;
    let p_b = x9 * (xe.x5 - x9) / p.r5;
    let p_l = x9 * x9 * d.g_load;
    Ok(p_pv + p_b - p_l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalEnergy {
    pub valid_from: f64,
    pub valid_to: f64,
    /// |∫(P_PV + P_B − P_L) dt| in joules.
    pub imbalance: f64,
    /// ½∫P_SC dt in joules.
    pub capacity: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBalanceReport {
    pub intervals: Vec<IntervalEnergy>,
    pub worst_margin: Option<f64>,
    pub pass: bool,
}

/// Checks the per-interval supercapacitor sizing inequality
/// `|∫(P_PV + P_B − P_L)dt| ≤ ½∫P_SC dt` at equilibrium power levels.
///
/// `disturbance(t)` supplies the inputs over each interval; the integral is
/// evaluated with composite Simpson on `samples` panels.
pub fn energy_balance_check<F>(
    plan: &[ReferenceSet],
    disturbance: F,
    p: &GridParameters,
    sc_power_limit: f64,
    samples: usize,
) -> Result<EnergyBalanceReport>
where
    F: Fn(f64) -> Disturbance,
{
    let n = samples.max(2).next_multiple_of(2);
    let mut intervals = Vec::with_capacity(plan.len());
    for refs in plan {
        let span = refs.duration();
        let dt = span / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let t = refs.valid_from + k as f64 * dt;
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * bus_power_imbalance(refs, &disturbance(t), p)?;
        }
        let imbalance = (acc * dt / 3.0).abs();
        let capacity = 0.5 * sc_power_limit * span;
        intervals.push(IntervalEnergy {
            valid_from: refs.valid_from,
            valid_to: refs.valid_to,
            imbalance,
            capacity,
            margin: capacity - imbalance,
        });
    }
    let worst_margin = intervals.iter().map(|i| i.margin).reduce(f64::min);
    Ok(EnergyBalanceReport {
        pass: worst_margin.is_none_or(|m| m >= 0.0),
        worst_margin,
        intervals,
    })
}
