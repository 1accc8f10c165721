//! Local feedback laws.
//!
//! * `u1`: PI-backstepping on the PV boost converter (x1 → x3).
//! * `u2`: the same structure on the battery converter (x4 → x6).
//! * `u3`: two-stage backstepping on the supercapacitor converter: the C7
//!   voltage is steered to a target `z7` that makes the bus storage function
//!   decrease, and the L8 current to the `z8` that realizes it.
//!
//! The second derivative of `z7` is taken as a backward difference of the
//! analytic first derivative across successive controller evaluations.

use crate::error::{GridError, Result};
use crate::model::{self, AugmentedState, Disturbance, DutyTriple, GridParameters, PhysicalState};
use crate::references::ReferenceSet;

/// Guard margin for every singular-denominator test.
pub const EPS_DIV: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GainSet {
    pub k1: f64,
    pub kbar1: f64,
    pub k1a: f64,
    pub k3: f64,
    pub kbar3: f64,
    pub k3a: f64,
    pub k4: f64,
    pub kbar4: f64,
    pub k4a: f64,
    pub k6: f64,
    pub kbar6: f64,
    pub k6a: f64,
    pub k7: f64,
    pub k8: f64,
}

/// Gains of one PI-backstepping branch, written generically: the outer loop
/// regulates the source-side capacitor voltage, the inner loop the inductor
/// current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchGains {
    pub outer: f64,
    pub outer_bar: f64,
    pub outer_int: f64,
    pub inner: f64,
    pub inner_bar: f64,
    pub inner_int: f64,
}

impl BranchGains {
    pub fn has_integral_action(&self) -> bool {
        self.outer_bar != 0.0 || self.outer_int != 0.0 || self.inner_bar != 0.0 || self.inner_int != 0.0
    }
}

impl GainSet {
    /// The simple stabilizing choice without integral action:
    /// K1 = 1/(R1C1), K3 = R01/L3, K4 = 1/(R4C4), K6 = R04/L6,
    /// K7 = 1/(R7C7), K8 = R08/L8.
    pub fn proof_defaults(p: &GridParameters) -> Self {
        Self {
            k1: 1.0 / (p.r1 * p.c1),
            k3: p.r01 / p.l3,
            k4: 1.0 / (p.r4 * p.c4),
            k6: p.r04 / p.l6,
            k7: 1.0 / (p.r7 * p.c7),
            k8: p.r08 / p.l8,
            ..Default::default()
        }
    }

    /// Gains with integral action used by the shipped scenarios. With table
    /// values the PV branch poles are −100, −100, −50, −50 and the battery
    /// branch poles about −15.8 ± 3.6i and −184 ± 65i.
    pub fn tuned() -> Self {
        Self {
            k1: 100.0,
            kbar1: 50.0,
            k1a: 50.0,
            k3: 200.0,
            kbar3: 100.0,
            k3a: 100.0,
            k4: 100.0,
            kbar4: 10.0,
            k4a: 100.0,
            k6: 300.0,
            kbar6: 100.0,
            k6a: 100.0,
            k7: 1000.0,
            k8: 1000.0,
        }
    }

    pub fn pv(&self) -> BranchGains {
        BranchGains {
            outer: self.k1,
            outer_bar: self.kbar1,
            outer_int: self.k1a,
            inner: self.k3,
            inner_bar: self.kbar3,
            inner_int: self.k3a,
        }
    }

    pub fn battery(&self) -> BranchGains {
        BranchGains {
            outer: self.k4,
            outer_bar: self.kbar4,
            outer_int: self.k4a,
            inner: self.k6,
            inner_bar: self.kbar6,
            inner_int: self.k6a,
        }
    }

    pub fn named_values(&self) -> [(&'static str, f64); 14] {
        [
            ("k1", self.k1),
            ("kbar1", self.kbar1),
            ("k1a", self.k1a),
            ("k3", self.k3),
            ("kbar3", self.kbar3),
            ("k3a", self.k3a),
            ("k4", self.k4),
            ("kbar4", self.kbar4),
            ("k4a", self.k4a),
            ("k6", self.k6),
            ("kbar6", self.kbar6),
            ("k6a", self.k6a),
            ("k7", self.k7),
            ("k8", self.k8),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named_values() {
            if !v.is_finite() || v < 0.0 {
                return Err(GridError::InvalidParameters(format!(
                    "gain {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.k7 <= 0.0 || self.k8 <= 0.0 {
            return Err(GridError::InvalidParameters("K7 and K8 must be positive".into()));
        }
        Ok(())
    }

    /// The sufficient orderings K3 > K1 > 1/(R1C1) and K6 > K4 > 1/(R4C4).
    /// Informational: the Routh test in `stability` is authoritative.
    pub fn sufficient_ordering(&self, p: &GridParameters) -> (bool, bool) {
        (
            self.k3 > self.k1 && self.k1 > 1.0 / (p.r1 * p.c1),
            self.k6 > self.k4 && self.k4 > 1.0 / (p.r4 * p.c4),
        )
    }
}

/// Final term of the C7 voltage target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BusLaw {
    /// `(−x9*² + 2·x9·x9*)/x9`, which leaves `C9·ẋ9 = −(b + (x9 − x9*)²/R7)/x9`
    /// once x7 tracks its target: no linear restoring term, and x9 runs away
    /// from below the reference.
    #[default]
    Printed,
    /// `x9*`, giving `C9·ẋ9 = −b/x9 − (x9 − x9*)/R7`.
    Centred,
}

impl BusLaw {
    pub fn name(&self) -> &'static str {
        match self {
            BusLaw::Printed => "printed",
            BusLaw::Centred => "centred",
        }
    }
}

impl std::str::FromStr for BusLaw {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "printed" => Ok(BusLaw::Printed),
            "centred" | "centered" => Ok(BusLaw::Centred),
            other => Err(GridError::InvalidScenario(format!(
                "unknown bus law '{other}' (expected printed or centred)"
            ))),
        }
    }
}

/// References plus the converter-output voltages they imply; x2* and x5*
/// are frozen for the whole reference interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint {
    pub refs: ReferenceSet,
    pub x2_star: f64,
    pub x5_star: f64,
    pub bus_law: BusLaw,
}

impl Setpoint {
    pub fn resolve(refs: ReferenceSet, d: &Disturbance, p: &GridParameters) -> Result<Self> {
        let eq = model::equilibrium(&refs, d, p)?;
        Ok(Self {
            refs,
            x2_star: eq.state.x2,
            x5_star: eq.state.x5,
            bus_law: BusLaw::Printed,
        })
    }

    pub fn with_bus_law(mut self, law: BusLaw) -> Self {
        self.bus_law = law;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerScratch {
    pub z3: f64,
    pub z6: f64,
    pub z7: f64,
    pub z8: f64,
    pub z7_dot_prev: f64,
    pub t_prev: f64,
}

/// Raw duty of a PI-backstepping law together with its inductor-current target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LawOutput {
    pub raw: f64,
    pub target: f64,
    /// The auxiliary input (v1 or v2) of the law.
    pub aux: f64,
}

fn pv_current_target(x: &PhysicalState, alpha1: f64, refs: &ReferenceSet, g: &GainSet, p: &GridParameters, d: &Disturbance) -> f64 {
    (d.v_pv - x.x1) / p.r1 + p.c1 * g.k1 * (x.x1 - refs.x1_star) + p.c1 * g.kbar1 * alpha1
}

fn battery_current_target(
    x: &PhysicalState,
    alpha4: f64,
    refs: &ReferenceSet,
    g: &GainSet,
    p: &GridParameters,
    d: &Disturbance,
) -> f64 {
    (d.v_b - x.x4) / p.r4 + p.c4 * g.k4 * (x.x4 - refs.x4_star) + p.c4 * g.kbar4 * alpha4
}

/// Integral-error rates `[α̇1, α̇3, α̇4, α̇6]`.
pub fn integral_rates(s: &AugmentedState, refs: &ReferenceSet, g: &GainSet, p: &GridParameters, d: &Disturbance) -> [f64; 4] {
    let x = &s.phys;
    let z3 = pv_current_target(x, s.alpha1, refs, g, p, d);
    let z6 = battery_current_target(x, s.alpha4, refs, g, p, d);
    [
        g.k1a * (x.x1 - refs.x1_star),
        g.k3a * (x.x3 - z3),
        g.k4a * (x.x4 - refs.x4_star),
        g.k6a * (x.x6 - z6),
    ]
}

fn v1(s: &AugmentedState, z3: f64, refs: &ReferenceSet, g: &GainSet, p: &GridParameters) -> f64 {
    let x = &s.phys;
    let e1 = x.x1 - refs.x1_star;
    g.k3 * (x.x3 - z3) + g.kbar3 * s.alpha3 - p.c1 * g.kbar1 * g.k1a * e1
        + (p.c1 * g.k1 - 1.0 / p.r1) * (g.k1 * e1 + g.kbar1 * s.alpha1)
}

fn v2(s: &AugmentedState, z6: f64, refs: &ReferenceSet, g: &GainSet, p: &GridParameters) -> f64 {
    let x = &s.phys;
    let e4 = x.x4 - refs.x4_star;
    -g.k6 * (x.x6 - z6) - g.kbar6 * s.alpha6 + g.kbar4 * g.k4a * e4
        - (p.c4 * g.k4 - 1.0 / p.r4) * (g.k4 * e4 + g.kbar4 * s.alpha4)
}

pub fn u1_law(s: &AugmentedState, refs: &ReferenceSet, g: &GainSet, p: &GridParameters, d: &Disturbance) -> Result<LawOutput> {
    let x = &s.phys;
    let den = x.x2 + (p.r01 - p.r02) * x.x3;
    if !(den.abs() > EPS_DIV) {
        return Err(GridError::SingularPvDuty(den.abs()));
    }
    let z3 = pv_current_target(x, s.alpha1, refs, g, p, d);
    let aux = v1(s, z3, refs, g, p);
    Ok(LawOutput {
        raw: (-x.x1 + x.x2 + p.r01 * x.x3 - p.l3 * aux) / den,
        target: z3,
        aux,
    })
}

pub fn u2_law(s: &AugmentedState, refs: &ReferenceSet, g: &GainSet, p: &GridParameters, d: &Disturbance) -> Result<LawOutput> {
    let x = &s.phys;
    if !(x.x5.abs() > EPS_DIV) {
        return Err(GridError::SingularBatteryDuty(x.x5.abs()));
    }
    let z6 = battery_current_target(x, s.alpha4, refs, g, p, d);
    let aux = v2(s, z6, refs, g, p);
    Ok(LawOutput {
        raw: (-x.x4 + x.x5 + p.r04 * x.x6 + p.l6 * aux) / x.x5,
        target: z6,
        aux,
    })
}

/// Time derivative of the raw u1 law along the plant flow `xd` with
/// integral rates `ad` (disturbances held constant).
fn u1_rate(s: &AugmentedState, law: &LawOutput, xd: &PhysicalState, ad: &[f64; 4], g: &GainSet, p: &GridParameters) -> f64 {
    let x = &s.phys;
    let z3_dot = (p.c1 * g.k1 - 1.0 / p.r1) * xd.x1 + p.c1 * g.kbar1 * ad[0];
    let v_dot = g.k3 * (xd.x3 - z3_dot) + g.kbar3 * ad[1] - p.c1 * g.kbar1 * g.k1a * xd.x1
        + (p.c1 * g.k1 - 1.0 / p.r1) * (g.k1 * xd.x1 + g.kbar1 * ad[0]);
    let den = x.x2 + (p.r01 - p.r02) * x.x3;
    let num = -x.x1 + x.x2 + p.r01 * x.x3 - p.l3 * law.aux;
    let den_dot = xd.x2 + (p.r01 - p.r02) * xd.x3;
    let num_dot = -xd.x1 + xd.x2 + p.r01 * xd.x3 - p.l3 * v_dot;
    (num_dot * den - num * den_dot) / (den * den)
}

fn u2_rate(s: &AugmentedState, law: &LawOutput, xd: &PhysicalState, ad: &[f64; 4], g: &GainSet, p: &GridParameters) -> f64 {
    let x = &s.phys;
    let z6_dot = (p.c4 * g.k4 - 1.0 / p.r4) * xd.x4 + p.c4 * g.kbar4 * ad[2];
    let v_dot = -g.k6 * (xd.x6 - z6_dot) - g.kbar6 * ad[3] + g.kbar4 * g.k4a * xd.x4
        - (p.c4 * g.k4 - 1.0 / p.r4) * (g.k4 * xd.x4 + g.kbar4 * ad[2]);
    let num = -x.x4 + x.x5 + p.r04 * x.x6 + p.l6 * law.aux;
    let num_dot = -xd.x4 + xd.x5 + p.r04 * xd.x6 + p.l6 * v_dot;
    (num_dot * x.x5 - num * xd.x5) / (x.x5 * x.x5)
}

/// Everything `u3_law` produces in one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct U3Output {
    pub raw: f64,
    pub z7: f64,
    pub z7_dot: f64,
    pub z7_ddot: f64,
    pub z8: f64,
    pub z8_dot: f64,
}

/// Target for the C7 voltage and its analytic time derivative.
///
/// `u` carries the applied PV and battery duties; a saturated channel is
/// treated as constant when differentiating.
pub fn grid_voltage_target(
    s: &AugmentedState,
    sp: &Setpoint,
    g: &GainSet,
    p: &GridParameters,
    d: &Disturbance,
    u: &DutyTriple,
) -> Result<(f64, f64)> {
    let x = &s.phys;
    if !(x.x9.abs() > EPS_DIV) || !(d.v_s > EPS_DIV) {
        return Err(GridError::SingularGridVoltage { x9: x.x9, v_s: d.v_s });
    }
    let refs = &sp.refs;
    let [u1, u2, _] = u.applied;
    let xd = model::plant_rhs(x, [u1, u2, 0.0], d, p);
    let ad = integral_rates(s, refs, g, p, d);

    let u1_dot = if u.saturated[0] {
        0.0
    } else {
        u1_rate(s, &u1_law(s, refs, g, p, d)?, &xd, &ad, g, p)
    };
    let u2_dot = if u.saturated[1] {
        0.0
    } else {
        u2_rate(s, &u2_law(s, refs, g, p, d)?, &xd, &ad, g, p)
    };

    let x9s = refs.x9_star;
    let e2 = x.x2 - sp.x2_star;
    let e5 = x.x5 - sp.x5_star;
    let a2 = (x.x9 - sp.x2_star) / p.r2 + x.x3 * (1.0 - u1);
    let a5 = (x.x9 - sp.x5_star) / p.r5 + x.x6 * (1.0 - u2);
    let b = e2 * a2 + e5 * a5;
    let bus = x.x9 * d.g_load - (x.x2 - x.x9) / p.r2 - (x.x5 - x.x9) / p.r5;
    let (last, last_dot) = match sp.bus_law {
        BusLaw::Printed => ((-x9s * x9s + 2.0 * x.x9 * x9s) / x.x9, x9s * x9s * xd.x9 / (x.x9 * x.x9)),
        BusLaw::Centred => (x9s, 0.0),
    };
    let z7 = -p.r7 * b / x.x9 + p.r7 * bus + last;

    let a2_dot = xd.x9 / p.r2 + xd.x3 * (1.0 - u1) - x.x3 * u1_dot;
    let a5_dot = xd.x9 / p.r5 + xd.x6 * (1.0 - u2) - x.x6 * u2_dot;
    let b_dot = xd.x2 * a2 + e2 * a2_dot + xd.x5 * a5 + e5 * a5_dot;
    let bus_dot = xd.x9 * d.g_load - (xd.x2 - xd.x9) / p.r2 - (xd.x5 - xd.x9) / p.r5;
    let x9_sq = x.x9 * x.x9;
    let z7_dot = -p.r7 * (b_dot * x.x9 - b * xd.x9) / x9_sq + p.r7 * bus_dot + last_dot;
    Ok((z7, z7_dot))
}

/// Supercapacitor duty from two-stage backstepping. Updates `scratch`.
#[allow(clippy::too_many_arguments)]
pub fn u3_law(
    s: &AugmentedState,
    sp: &Setpoint,
    g: &GainSet,
    p: &GridParameters,
    d: &Disturbance,
    u: &DutyTriple,
    scratch: &mut ControllerScratch,
    t: f64,
    dt: f64,
) -> Result<U3Output> {
    if !(dt > 0.0) {
        return Err(GridError::InvalidState(format!("controller step dt = {dt} must be positive")));
    }
    let (z7, z7_dot) = grid_voltage_target(s, sp, g, p, d, u)?;
    let x = &s.phys;
    let xd = model::plant_rhs(x, [u.applied[0], u.applied[1], 0.0], d, p);
    let z7_ddot = (z7_dot - scratch.z7_dot_prev) / dt;

    let z8 = p.c7 * g.k7 * (x.x7 - z7) - (x.x7 - x.x9) / p.r7 - p.c7 * z7_dot;
    let z8_dot = p.c7 * g.k7 * (xd.x7 - z7_dot) - (xd.x7 - xd.x9) / p.r7 - p.c7 * z7_ddot;
    let raw = (x.x7 + p.r08 * x.x8 + p.l8 * z8_dot - p.l8 * g.k8 * (x.x8 - z8)) / d.v_s;

    scratch.z7 = z7;
    scratch.z8 = z8;
    scratch.z7_dot_prev = z7_dot;
    scratch.t_prev = t;
    Ok(U3Output {
        raw,
        z7,
        z7_dot,
        z7_ddot,
        z8,
        z8_dot,
    })
}

/// Clamped duties plus the integral-state bookkeeping for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralUpdate {
    pub rates: [f64; 4],
    pub active: [bool; 4],
    pub increments: [f64; 4],
}

/// Sensitivities ∂u/∂α of the raw PV (α1, α3) and battery (α4, α6) duties.
fn duty_alpha_sensitivity(x: &PhysicalState, g: &GainSet, p: &GridParameters) -> [f64; 4] {
    let den1 = x.x2 + (p.r01 - p.r02) * x.x3;
    let dv1_da1 = -g.k3 * p.c1 * g.kbar1 + (p.c1 * g.k1 - 1.0 / p.r1) * g.kbar1;
    let dv2_da4 = g.k6 * p.c4 * g.kbar4 - (p.c4 * g.k4 - 1.0 / p.r4) * g.kbar4;
    [
        -p.l3 * dv1_da1 / den1,
        -p.l3 * g.kbar3 / den1,
        p.l6 * dv2_da4 / x.x5,
        -p.l6 * g.kbar6 / x.x5,
    ]
}

/// Clamps each duty to [0, 1] and applies conditional integration: an
/// integrator is frozen while its channel is saturated and its current rate
/// would push the raw duty further past the active bound.
pub fn saturate_and_update_integrals(
    raw: [f64; 3],
    s: &AugmentedState,
    refs: &ReferenceSet,
    g: &GainSet,
    p: &GridParameters,
    d: &Disturbance,
    dt: f64,
) -> (DutyTriple, IntegralUpdate) {
    let duties = DutyTriple::from_raw(raw);
    let rates = integral_rates(s, refs, g, p, d);
    let sens = duty_alpha_sensitivity(&s.phys, g, p);
    let mut active = [true; 4];
    for (i, a) in active.iter_mut().enumerate() {
        let ch = if i < 2 { 0 } else { 1 };
        let push = sens[i] * rates[i];
        let deepening = (raw[ch] > 1.0 && push > 0.0) || (raw[ch] < 0.0 && push < 0.0);
        *a = !deepening;
    }
    let mut increments = [0.0; 4];
    for i in 0..4 {
        if active[i] {
            increments[i] = rates[i] * dt;
        }
    }
    (
        duties,
        IntegralUpdate {
            rates,
            active,
            increments,
        },
    )
}

/// One full controller evaluation at a step boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub duties: DutyTriple,
    pub integrals: IntegralUpdate,
    pub z3: f64,
    pub z6: f64,
    pub u3: U3Output,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    s: &AugmentedState,
    sp: &Setpoint,
    g: &GainSet,
    p: &GridParameters,
    d: &Disturbance,
    scratch: &mut ControllerScratch,
    t: f64,
    dt: f64,
) -> Result<ControlOutput> {
    let l1 = u1_law(s, &sp.refs, g, p, d)?;
    let l2 = u2_law(s, &sp.refs, g, p, d)?;
    let partial = DutyTriple::from_raw([l1.raw, l2.raw, 0.5]);
    let u3 = u3_law(s, sp, g, p, d, &partial, scratch, t, dt)?;
    let (duties, integrals) = saturate_and_update_integrals([l1.raw, l2.raw, u3.raw], s, &sp.refs, g, p, d, dt);
    scratch.z3 = l1.target;
    scratch.z6 = l2.target;
    Ok(ControlOutput {
        duties,
        integrals,
        z3: l1.target,
        z6: l2.target,
        u3,
    })
}
