//! Averaged nine-state converter network and its steady states.
//!
//! State layout (all SI units):
//!
//! | state | quantity                                   |
//! |-------|--------------------------------------------|
//! | x1    | PV-side capacitor C1 voltage               |
//! | x2    | PV converter output capacitor C2 voltage   |
//! | x3    | PV boost inductor L3 current               |
//! | x4    | battery-side capacitor C4 voltage          |
//! | x5    | battery converter output capacitor C5      |
//! | x6    | battery inductor L6 current                |
//! | x7    | supercapacitor converter capacitor C7      |
//! | x8    | supercapacitor inductor L8 current         |
//! | x9    | DC bus capacitor C9 voltage                |
//!
//! The controllers add four integral-error states, see [`AugmentedState`].

use crate::control::{self, GainSet};
use crate::error::{GridError, Result};
use crate::references::ReferenceSet;

/// Circuit constants. Parasitics that do not appear in the averaged
/// equations (R05, R06, R07, R8) are intentionally absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridParameters {
    pub c1: f64,
    pub c2: f64,
    pub c4: f64,
    pub c5: f64,
    pub c7: f64,
    pub c9: f64,
    pub l3: f64,
    pub l6: f64,
    pub l8: f64,
    pub r1: f64,
    pub r2: f64,
    pub r4: f64,
    pub r5: f64,
    pub r7: f64,
    pub r01: f64,
    pub r02: f64,
    pub r04: f64,
    pub r08: f64,
}

impl GridParameters {
    /// Reference component values of the studied microgrid.
    pub const fn table() -> Self {
        Self {
            c1: 0.1,
            c2: 0.01,
            c4: 0.1,
            c5: 0.01,
            c7: 0.01,
            c9: 1e-4,
            l3: 0.033,
            l6: 0.033,
            l8: 0.0033,
            r1: 0.1,
            r2: 0.1,
            r4: 0.1,
            r5: 0.01,
            r7: 0.1,
            r01: 0.01,
            r02: 0.01,
            r04: 0.01,
            r08: 0.01,
        }
    }

    pub fn named_values(&self) -> [(&'static str, f64); 18] {
        [
            ("c1", self.c1),
            ("c2", self.c2),
            ("c4", self.c4),
            ("c5", self.c5),
            ("c7", self.c7),
            ("c9", self.c9),
            ("l3", self.l3),
            ("l6", self.l6),
            ("l8", self.l8),
            ("r1", self.r1),
            ("r2", self.r2),
            ("r4", self.r4),
            ("r5", self.r5),
            ("r7", self.r7),
            ("r01", self.r01),
            ("r02", self.r02),
            ("r04", self.r04),
            ("r08", self.r08),
        ]
    }

    /// Every constant must be finite and strictly positive. The source-side
    /// parasitics R01/R04 may be zero (lossless limit).
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named_values() {
            let lossless_ok = matches!(name, "r01" | "r02" | "r04" | "r08") && v == 0.0;
            if !v.is_finite() || (v <= 0.0 && !lossless_ok) {
                return Err(GridError::InvalidParameters(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for GridParameters {
    fn default() -> Self {
        Self::table()
    }
}

/// External inputs: source voltages and load conductance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbance {
    pub v_pv: f64,
    pub v_b: f64,
    pub v_s: f64,
    /// 1/R_L in siemens; zero means the load is disconnected.
    pub g_load: f64,
}

impl Disturbance {
    pub fn new(v_pv: f64, v_b: f64, v_s: f64, r_load: f64) -> Self {
        Self {
            v_pv,
            v_b,
            v_s,
            g_load: 1.0 / r_load,
        }
    }

    pub fn r_load(&self) -> f64 {
        1.0 / self.g_load
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.v_pv.is_finite()
            && self.v_pv > 0.0
            && self.v_b.is_finite()
            && self.v_b > 0.0
            && self.v_s.is_finite()
            && self.v_s > 0.0
            && self.g_load.is_finite()
            && self.g_load >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(GridError::InvalidParameters(format!(
                "disturbance out of range: {self:?}"
            )))
        }
    }
}

impl Default for Disturbance {
    fn default() -> Self {
        Self::new(800.0, 600.0, 1500.0, 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhysicalState {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub x4: f64,
    pub x5: f64,
    pub x6: f64,
    pub x7: f64,
    pub x8: f64,
    pub x9: f64,
}

impl PhysicalState {
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.x1, self.x2, self.x3, self.x4, self.x5, self.x6, self.x7, self.x8, self.x9,
        ]
    }

    pub fn from_array(a: [f64; 9]) -> Self {
        Self {
            x1: a[0],
            x2: a[1],
            x3: a[2],
            x4: a[3],
            x5: a[4],
            x6: a[5],
            x7: a[6],
            x8: a[7],
            x9: a[8],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Largest component magnitude; used as the "state scale" in tolerances.
    pub fn scale(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &PhysicalState) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Physical state plus the four integral-error states of the PI laws.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentedState {
    pub phys: PhysicalState,
    pub alpha1: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub alpha6: f64,
}

impl AugmentedState {
    pub const DIM: usize = 13;

    pub fn cold(phys: PhysicalState) -> Self {
        Self {
            phys,
            ..Default::default()
        }
    }

    pub fn to_array(&self) -> [f64; 13] {
        let p = self.phys.to_array();
        let mut out = [0.0; 13];
        out[..9].copy_from_slice(&p);
        out[9] = self.alpha1;
        out[10] = self.alpha3;
        out[11] = self.alpha4;
        out[12] = self.alpha6;
        out
    }

    pub fn from_array(a: [f64; 13]) -> Self {
        let mut p = [0.0; 9];
        p.copy_from_slice(&a[..9]);
        Self {
            phys: PhysicalState::from_array(p),
            alpha1: a[9],
            alpha3: a[10],
            alpha4: a[11],
            alpha6: a[12],
        }
    }

    pub fn alphas(&self) -> [f64; 4] {
        [self.alpha1, self.alpha3, self.alpha4, self.alpha6]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Duty cycles before and after clamping to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DutyTriple {
    pub raw: [f64; 3],
    pub applied: [f64; 3],
    pub saturated: [bool; 3],
}

impl DutyTriple {
    pub fn from_raw(raw: [f64; 3]) -> Self {
        let mut applied = [0.0; 3];
        let mut saturated = [false; 3];
        for i in 0..3 {
            applied[i] = raw[i].clamp(0.0, 1.0);
            saturated[i] = applied[i] != raw[i];
        }
        Self {
            raw,
            applied,
            saturated,
        }
    }

    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|&s| s)
    }
}

/// Right-hand side of the nine averaged converter equations.
pub fn plant_rhs(x: &PhysicalState, u: [f64; 3], d: &Disturbance, p: &GridParameters) -> PhysicalState {
    let [u1, u2, u3] = u;
    PhysicalState {
        x1: (d.v_pv - x.x1) / (p.r1 * p.c1) - x.x3 / p.c1,
        x2: (x.x9 - x.x2) / (p.r2 * p.c2) + x.x3 * (1.0 - u1) / p.c2,
        x3: (x.x1 - x.x2 - p.r01 * x.x3 + (x.x2 + (p.r01 - p.r02) * x.x3) * u1) / p.l3,
        x4: (d.v_b - x.x4) / (p.r4 * p.c4) - x.x6 / p.c4,
        x5: (x.x9 - x.x5) / (p.r5 * p.c5) + x.x6 * (1.0 - u2) / p.c5,
        x6: (x.x4 - x.x5 - p.r04 * x.x6 + x.x5 * u2) / p.l6,
        x7: (x.x9 - x.x7) / (p.r7 * p.c7) - x.x8 / p.c7,
        x8: (d.v_s * u3 - p.r08 * x.x8 - x.x7) / p.l8,
        x9: ((x.x2 - x.x9) / p.r2 + (x.x5 - x.x9) / p.r5 + (x.x7 - x.x9) / p.r7
            - x.x9 * d.g_load)
            / p.c9,
    }
}

/// Time derivative of the full augmented state with every integrator active.
pub fn rhs(
    state: &AugmentedState,
    u: &DutyTriple,
    d: &Disturbance,
    p: &GridParameters,
    refs: &ReferenceSet,
    gains: &GainSet,
) -> Result<AugmentedState> {
    rhs_masked(state, u.applied, d, p, refs, gains, [true; 4])
}

/// As [`rhs`], but integrators whose `active` flag is false are frozen.
pub fn rhs_masked(
    state: &AugmentedState,
    u: [f64; 3],
    d: &Disturbance,
    p: &GridParameters,
    refs: &ReferenceSet,
    gains: &GainSet,
    active: [bool; 4],
) -> Result<AugmentedState> {
    if !state.is_finite() || u.iter().any(|v| !v.is_finite()) {
        return Err(GridError::InvalidState(format!(
            "non-finite component in {state:?} / u = {u:?}"
        )));
    }
    let phys = plant_rhs(&state.phys, u, d, p);
    let rates = control::integral_rates(state, refs, gains, p, d);
    let pick = |i: usize| if active[i] { rates[i] } else { 0.0 };
    Ok(AugmentedState {
        phys,
        alpha1: pick(0),
        alpha3: pick(1),
        alpha4: pick(2),
        alpha6: pick(3),
    })
}

/// Both roots of `x² + b·x + c = 0` as `(plus, minus)`, i.e. the branches
/// `(-b ± √(b²-4c))/2`, evaluated without cancellation.
pub(crate) fn monic_quadratic_roots(b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - 4.0 * c;
    if !(disc >= 0.0) {
        return None;
    }
    let s = disc.sqrt();
    if b <= 0.0 {
        let plus = 0.5 * (-b + s);
        let minus = if plus != 0.0 { c / plus } else { 0.0 };
        Some((plus, minus))
    } else {
        let minus = 0.5 * (-b - s);
        let plus = c / minus;
        Some((plus, minus))
    }
}

/// Steady-state residual of the x2 line with the equilibrium duty substituted:
/// `(x2 − x9*)(x2 + a2) − R2·x3(x1* − R02·x3)`.
pub fn x2_residual(x2: f64, refs: &ReferenceSet, d: &Disturbance, p: &GridParameters) -> f64 {
    let x3 = (d.v_pv - refs.x1_star) / p.r1;
    let a2 = (p.r01 - p.r02) * x3;
    (x2 - refs.x9_star) * (x2 + a2) - p.r2 * x3 * (refs.x1_star - p.r02 * x3)
}

/// Steady-state residual of the x5 line with the equilibrium duty substituted:
/// `x5(x5 − x9*) − R5·x6(x4* − R04·x6)`.
pub fn x5_residual(x5: f64, refs: &ReferenceSet, d: &Disturbance, p: &GridParameters) -> f64 {
    let x6 = (d.v_b - refs.x4_star) / p.r4;
    x5 * (x5 - refs.x9_star) - p.r5 * x6 * (refs.x4_star - p.r04 * x6)
}

/// The published closed forms for the converter output voltages, kept as a
/// comparison path for the residual-rooted values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrintedForms {
    pub a2: f64,
    pub delta2: f64,
    pub delta5: f64,
    /// `None` when the printed radicand is negative.
    pub x2: Option<f64>,
    pub x5: Option<f64>,
}

pub fn printed_forms(refs: &ReferenceSet, d: &Disturbance, p: &GridParameters) -> PrintedForms {
    let x9 = refs.x9_star;
    let x1 = refs.x1_star;
    let x4 = refs.x4_star;
    let a2 = (p.r01 - p.r02) / p.r1 * (d.v_pv - x1);
    let delta2 = (d.v_pv - x1) * (x1 - p.r02 / p.r1 * (d.v_pv - x1)) / (p.r1 * p.c2);
    let delta5 = (d.v_b - x4) * (-x4 + p.r04 / p.r4 * (d.v_b - x4)) / (p.r4 * p.c5);
    let rad2 = (x9 - a2).powi(2) + 4.0 * p.r2 * p.c2 * (delta2 + a2 * x9);
    let rad5 = x9 * x9 + 4.0 * p.r5 * p.c5 * delta5;
    PrintedForms {
        a2,
        delta2,
        delta5,
        x2: (rad2 >= 0.0).then(|| 0.5 * (x9 - a2) + 0.5 * rad2.sqrt()),
        x5: (rad5 >= 0.0).then(|| 0.5 * x9 + 0.5 * rad5.sqrt()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub state: PhysicalState,
    pub printed: PrintedForms,
    pub warnings: Vec<String>,
}

fn pick_positive_root(name: &str, b: f64, c: f64, x9: f64, warnings: &mut Vec<String>) -> Result<f64> {
    let (plus, minus) = monic_quadratic_roots(b, c)
        .ok_or_else(|| GridError::NoSteadyState(format!("{name}: negative discriminant")))?;
    match (plus > 0.0, minus > 0.0) {
        (true, true) => {
            let pick = if (plus - x9).abs() <= (minus - x9).abs() { plus } else { minus };
            warnings.push(format!(
                "{name}: two positive roots ({plus:.6}, {minus:.6}); selected {pick:.6}"
            ));
            Ok(pick)
        }
        (true, false) => Ok(plus),
        (false, true) => Ok(minus),
        (false, false) => Err(GridError::NoSteadyState(format!(
            "{name}: roots {plus:.6}, {minus:.6} are not positive"
        ))),
    }
}

/// Closed-loop equilibrium for the given references.
///
/// x2 and x5 come from the exact steady-state quadratics of their lines
/// (with the equilibrium duties substituted); the printed closed forms are
/// returned alongside for comparison.
pub fn equilibrium(refs: &ReferenceSet, d: &Disturbance, p: &GridParameters) -> Result<Equilibrium> {
    let x9 = refs.x9_star;
    if !(x9 > 0.0) || !refs.x1_star.is_finite() || !refs.x4_star.is_finite() {
        return Err(GridError::NoSteadyState(format!("x9* = {x9} must be positive")));
    }
    let x3 = (d.v_pv - refs.x1_star) / p.r1;
    let x6 = (d.v_b - refs.x4_star) / p.r4;
    let a2 = (p.r01 - p.r02) * x3;
    let mut warnings = Vec::new();

    let x2 = pick_positive_root(
        "x2",
        a2 - x9,
        -a2 * x9 - p.r2 * x3 * (refs.x1_star - p.r02 * x3),
        x9,
        &mut warnings,
    )?;
    let x5 = pick_positive_root(
        "x5",
        -x9,
        -p.r5 * x6 * (refs.x4_star - p.r04 * x6),
        x9,
        &mut warnings,
    )?;

    Ok(Equilibrium {
        state: PhysicalState {
            x1: refs.x1_star,
            x2,
            x3,
            x4: refs.x4_star,
            x5,
            x6,
            x7: x9,
            x8: 0.0,
            x9,
        },
        printed: printed_forms(refs, d, p),
        warnings,
    })
}

/// Duties that hold `xe` stationary (from ẋ3 = ẋ6 = ẋ8 = 0).
pub fn equilibrium_duties(xe: &PhysicalState, d: &Disturbance, p: &GridParameters) -> Result<DutyTriple> {
    let den1 = xe.x2 + (p.r01 - p.r02) * xe.x3;
    if den1 == 0.0 || xe.x5 == 0.0 || d.v_s == 0.0 {
        return Err(GridError::DegenerateEquilibrium(format!(
            "zero duty denominator (x2+(R01-R02)x3 = {den1}, x5 = {}, V_S = {})",
            xe.x5, d.v_s
        )));
    }
    let u1 = (xe.x2 + p.r01 * xe.x3 - xe.x1) / den1;
    let u2 = (xe.x5 + p.r04 * xe.x6 - xe.x4) / xe.x5;
    let u3 = (xe.x7 + p.r08 * xe.x8) / d.v_s;
    Ok(DutyTriple::from_raw([u1, u2, u3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn refs(x1: f64, x4: f64, x9: f64) -> ReferenceSet {
        ReferenceSet::new(x1, x4, x9)
    }

    #[test]
    fn open_circuit_pv_derivative() {
        let p = GridParameters::table();
        let d = Disturbance {
            v_pv: 800.0,
            v_b: 600.0,
            v_s: 1500.0,
            g_load: 0.1,
        };
        let dx = plant_rhs(&PhysicalState::default(), [0.0; 3], &d, &p);
        assert_relative_eq!(dx.x1, 80_000.0, max_relative = 1e-12);
    }

    #[test]
    fn equal_bus_voltages_without_load_hold_bus() {
        let p = GridParameters::table();
        let d = Disturbance {
            g_load: 0.0,
            ..Disturbance::default()
        };
        let x = PhysicalState {
            x2: 950.0,
            x5: 950.0,
            x7: 950.0,
            x9: 950.0,
            x3: 17.0,
            ..Default::default()
        };
        assert_eq!(plant_rhs(&x, [0.3, 0.2, 0.5], &d, &p).x9, 0.0);
    }

    #[test]
    fn zero_pv_current_equilibrium() {
        let p = GridParameters::table();
        let d = Disturbance::default();
        let eq = equilibrium(&refs(800.0, 600.0, 1000.0), &d, &p).unwrap();
        assert_eq!(eq.state.x3, 0.0);
        assert_relative_eq!(eq.state.x2, 1000.0, max_relative = 1e-14);
        assert_eq!(eq.state.x6, 0.0);
        assert_relative_eq!(eq.state.x5, 1000.0, max_relative = 1e-14);
        let u = equilibrium_duties(&eq.state, &d, &p).unwrap();
        assert_relative_eq!(u.raw[1], 0.4, max_relative = 1e-12);
    }

    /// Bisection on the x2 residual, independent of the quadratic formula.
    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        assert!(f(lo) * f(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn worked_pv_equilibrium_matches_bisection() {
        let p = GridParameters::table();
        let d = Disturbance::default();
        let r = refs(780.0, 600.0, 1000.0);
        let oracle = bisect(|x2| x2_residual(x2, &r, &d, &p), 1000.0, 1100.0);
        let eq = equilibrium(&r, &d, &p).unwrap();
        assert_relative_eq!(eq.state.x3, 200.0, max_relative = 1e-12);
        assert_relative_eq!(eq.state.x2, oracle, max_relative = 1e-12);
        assert!((eq.state.x2 - 1015.33).abs() < 0.01);
        // The PV current balance closes: ẋ2 = ẋ3 = 0 at the equilibrium duty.
        let u = equilibrium_duties(&eq.state, &d, &p).unwrap();
        assert!((u.raw[0] - 0.2337).abs() < 1e-4);
        let dx = plant_rhs(&eq.state, u.raw, &d, &p);
        assert!(dx.x2.abs() < 1e-8 && dx.x3.abs() < 1e-8);
    }

    #[test]
    fn supercap_equilibrium_duty() {
        let p = GridParameters::table();
        let d = Disturbance::default();
        let eq = equilibrium(&refs(780.0, 600.0, 1000.0), &d, &p).unwrap();
        let u = equilibrium_duties(&eq.state, &d, &p).unwrap();
        assert_relative_eq!(u.raw[2], 1000.0 / 1500.0, max_relative = 1e-14);
    }

    #[test]
    fn printed_x5_disagrees_when_battery_carries_current() {
        let p = GridParameters::table();
        let d = Disturbance::default();
        let r = refs(780.0, 608.7, 1000.0);
        let eq = equilibrium(&r, &d, &p).unwrap();
        assert!(x5_residual(eq.state.x5, &r, &d, &p).abs() < 1e-9 * 1e6);
        let printed = eq.printed.x5.unwrap();
        assert!((printed - eq.state.x5).abs() > 0.1);
        // With R01 = R02 the printed x2 coincides with the residual root.
        assert_relative_eq!(eq.printed.x2.unwrap(), eq.state.x2, max_relative = 1e-12);
    }

    #[test]
    fn no_positive_root_is_an_error() {
        let p = GridParameters::table();
        let d = Disturbance::default();
        // Enormous battery charge power with a tiny bus voltage.
        let err = equilibrium(&refs(780.0, 5000.0, 1.0), &d, &p).unwrap_err();
        assert!(matches!(err, GridError::NoSteadyState(_)), "{err}");
    }

    #[test]
    fn degenerate_duty_denominator() {
        let p = GridParameters::table();
        let d = Disturbance::default();
        let x = PhysicalState {
            x5: 0.0,
            x2: 1000.0,
            ..Default::default()
        };
        assert!(matches!(
            equilibrium_duties(&x, &d, &p),
            Err(GridError::DegenerateEquilibrium(_))
        ));
    }

    #[test]
    fn rhs_rejects_non_finite_state() {
        let p = GridParameters::table();
        let d = Disturbance::default();
        let mut s = AugmentedState::default();
        s.phys.x4 = f64::NAN;
        let err = rhs(
            &s,
            &DutyTriple::from_raw([0.5; 3]),
            &d,
            &p,
            &refs(780.0, 600.0, 1000.0),
            &GainSet::proof_defaults(&p),
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("invalid state"));
    }

    #[test]
    fn quadratic_roots_are_stable() {
        let (plus, minus) = monic_quadratic_roots(-1e8, 1.0).unwrap();
        assert_relative_eq!(plus, 1e8, max_relative = 1e-15);
        assert_relative_eq!(minus, 1e-8, max_relative = 1e-15);
        let (plus, minus) = monic_quadratic_roots(3.0, 2.0).unwrap();
        assert_relative_eq!(plus, -1.0);
        assert_relative_eq!(minus, -2.0);
        assert!(monic_quadratic_roots(0.0, 1.0).is_none());
    }
}
