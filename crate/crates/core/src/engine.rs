//! Fixed-step closed-loop integration.
//!
//! The controllers are evaluated once at the start of every step and their
//! duties held over the step (zero-order hold); the 13 augmented states are
//! advanced with the classical four-stage explicit Runge–Kutta method.

use crate::control::{self, BusLaw, ControlOutput, ControllerScratch, GainSet, Setpoint};
use crate::error::{GridError, Result};
use crate::model::{self, AugmentedState, Disturbance, DutyTriple, GridParameters, PhysicalState};
use crate::references::{self, ReferenceSet};
use crate::stability::{self, LyapunovSample, LyapunovWeights, MonitorConfig, MonitorPoint, MonitorReport};

/// Any state component beyond this magnitude is treated as numerical blow-up.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// Classical four-stage explicit Runge–Kutta step.
pub fn rk4_step<const N: usize, F>(mut f: F, t: f64, y: &[f64; N], h: f64) -> Result<[f64; N]>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    let axpy = |y: &[f64; N], k: &[f64; N], a: f64| {
        let mut out = *y;
        for i in 0..N {
            out[i] += a * k[i];
        }
        out
    };
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, &axpy(y, &k1, 0.5 * h))?;
    let k3 = f(t + 0.5 * h, &axpy(y, &k2, 0.5 * h))?;
    let k4 = f(t + h, &axpy(y, &k3, h))?;
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sine {
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub start: f64,
    pub end: f64,
}

/// Piecewise-linear signal with an optional additive sinusoid. Repeating a
/// knot time produces a step; the later value applies from that instant on.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub knots: Vec<(f64, f64)>,
    pub sine: Option<Sine>,
}

impl Signal {
    pub fn constant(v: f64) -> Self {
        Self {
            knots: vec![(0.0, v)],
            sine: None,
        }
    }

    pub fn knots(knots: Vec<(f64, f64)>) -> Self {
        Self { knots, sine: None }
    }

    pub fn with_sine(mut self, sine: Sine) -> Self {
        self.sine = Some(sine);
        self
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.knots.is_empty() {
            return Err(GridError::InvalidScenario(format!("{name}: at least one knot required")));
        }
        for w in self.knots.windows(2) {
            if !(w[1].0 >= w[0].0) {
                return Err(GridError::InvalidScenario(format!("{name}: knot times must be non-decreasing")));
            }
        }
        if self.knots.iter().any(|(t, v)| !t.is_finite() || v.is_nan()) {
            return Err(GridError::InvalidScenario(format!("{name}: knots must be numeric")));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        let k = &self.knots;
        let idx = k.partition_point(|&(tk, _)| tk <= t);
        let base = if idx == 0 {
            k[0].1
        } else if idx == k.len() {
            k[k.len() - 1].1
        } else {
            let (t0, v0) = k[idx - 1];
            let (t1, v1) = k[idx];
            if t1 == t0 || v0 == v1 {
                v0
            } else {
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        };
        match self.sine {
            Some(s) if t >= s.start && t < s.end => {
                base + s.amplitude * (std::f64::consts::TAU * s.frequency_hz * (t - s.start)).sin()
            }
            _ => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSchedule {
    pub v_pv: Signal,
    pub v_b: Signal,
    pub v_s: Signal,
    /// Load resistance in ohms; `inf` disconnects the load.
    pub r_load: Signal,
}

impl DisturbanceSchedule {
    pub fn constant(d: Disturbance) -> Self {
        Self {
            v_pv: Signal::constant(d.v_pv),
            v_b: Signal::constant(d.v_b),
            v_s: Signal::constant(d.v_s),
            r_load: Signal::constant(d.r_load()),
        }
    }

    pub fn at(&self, t: f64) -> Disturbance {
        Disturbance {
            v_pv: self.v_pv.value(t),
            v_b: self.v_b.value(t),
            v_s: self.v_s.value(t),
            g_load: 1.0 / self.r_load.value(t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.v_pv.validate("v_pv")?;
        self.v_b.validate("v_b")?;
        self.v_s.validate("v_s")?;
        self.r_load.validate("r_load")?;
        if self.r_load.knots.iter().any(|&(_, r)| !(r > 0.0)) {
            return Err(GridError::InvalidScenario("r_load must be positive".into()));
        }
        Ok(())
    }
}

/// One reference interval. A missing x4* is solved from the current balance
/// with the disturbance at `valid_from`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    pub valid_from: f64,
    pub valid_to: f64,
    pub x1_star: f64,
    pub x9_star: f64,
    pub x4_star: Option<f64>,
}

impl PlanEntry {
    pub fn resolve(&self, schedule: &DisturbanceSchedule, p: &GridParameters, law: BusLaw) -> Result<Setpoint> {
        let d = schedule.at(self.valid_from);
        let x4 = match self.x4_star {
            Some(v) => v,
            None => references::solve_x4_star(self.x1_star, self.x9_star, &d, p)?.x4_star,
        };
        let refs = ReferenceSet::new(self.x1_star, x4, self.x9_star).with_window(self.valid_from, self.valid_to);
        Ok(Setpoint::resolve(refs, &d, p)?.with_bus_law(law))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePlan {
    pub entries: Vec<PlanEntry>,
}

impl ReferencePlan {
    /// Intervals of length `period` covering `[0, t_end]`; the i-th interval
    /// uses `x1_stars[i]` (the last value repeats).
    pub fn periodic(period: f64, t_end: f64, x9_star: f64, x1_stars: &[f64], x4_stars: Option<&[f64]>) -> Self {
        let n = ((t_end / period) - 1e-9).ceil().max(1.0) as usize;
        let at = |v: &[f64], i: usize| v[i.min(v.len() - 1)];
        let entries = (0..n)
            .map(|i| PlanEntry {
                valid_from: i as f64 * period,
                valid_to: if i + 1 == n { t_end.max((i + 1) as f64 * period) } else { (i + 1) as f64 * period },
                x1_star: at(x1_stars, i),
                x9_star,
                x4_star: x4_stars.map(|v| at(v, i)),
            })
            .collect();
        Self { entries }
    }

    pub fn validate(&self, t_end: f64) -> Result<()> {
        let e = &self.entries;
        if e.is_empty() {
            return Err(GridError::InvalidScenario("reference plan is empty".into()));
        }
        if e[0].valid_from != 0.0 {
            return Err(GridError::InvalidScenario("reference plan must start at t = 0".into()));
        }
        for w in e.windows(2) {
            if (w[0].valid_to - w[1].valid_from).abs() > 1e-12 {
                return Err(GridError::InvalidScenario(format!(
                    "reference intervals must be contiguous ({} vs {})",
                    w[0].valid_to, w[1].valid_from
                )));
            }
        }
        for entry in e {
            if !(entry.valid_to > entry.valid_from) {
                return Err(GridError::InvalidScenario("reference interval has non-positive length".into()));
            }
        }
        if e[e.len() - 1].valid_to < t_end - 1e-12 {
            return Err(GridError::InvalidScenario("reference intervals do not cover [0, t_end]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// The first interval's equilibrium, each physical component multiplied
    /// by the given factor; integral states start at zero.
    ScaledEquilibrium([f64; 9]),
    Explicit(AugmentedState),
}

impl InitialCondition {
    pub fn equilibrium() -> Self {
        Self::ScaledEquilibrium([1.0; 9])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: GridParameters,
    pub gains: GainSet,
    pub schedule: DisturbanceSchedule,
    pub plan: ReferencePlan,
    pub t_end: f64,
    pub h: f64,
    pub record_every: usize,
    pub initial: InitialCondition,
    /// Start the ż7 history at its true value instead of zero.
    pub warm_start: bool,
    pub bus_law: BusLaw,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.gains.validate()?;
        self.schedule.validate()?;
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(GridError::InvalidScenario(format!("step h = {} must be positive", self.h)));
        }
        if !(self.t_end >= self.h) {
            return Err(GridError::InvalidScenario(format!("t_end = {} must be at least h", self.t_end)));
        }
        if self.record_every == 0 {
            return Err(GridError::InvalidScenario("record_every must be at least 1".into()));
        }
        self.plan.validate(self.t_end)
    }

    /// Constant disturbance and references over `[0, t_end]`, starting at the
    /// equilibrium with the default step and sampling.
    pub fn constant(gains: GainSet, d: Disturbance, x1_star: f64, x9_star: f64, t_end: f64) -> Self {
        Self {
            params: GridParameters::table(),
            gains,
            schedule: DisturbanceSchedule::constant(d),
            plan: ReferencePlan::periodic(t_end, t_end, x9_star, &[x1_star], None),
            t_end,
            h: 1e-6,
            record_every: 1000,
            initial: InitialCondition::equilibrium(),
            warm_start: false,
            bus_law: BusLaw::Printed,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.h).round() as usize
    }

    /// Instants in `(0, t_end)` where a reference swaps, a disturbance steps or
    /// a ramp or sinusoid starts or ends.
    pub fn event_times(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.plan.entries.iter().skip(1).map(|e| e.valid_from).collect();
        for s in [&self.schedule.v_pv, &self.schedule.v_b, &self.schedule.v_s, &self.schedule.r_load] {
            for w in s.knots.windows(2) {
                if w[0].1 != w[1].1 {
                    ev.push(w[0].0);
                    ev.push(w[1].0);
                }
            }
            if let Some(sine) = s.sine {
                ev.push(sine.start);
                ev.push(sine.end);
            }
        }
        ev.retain(|&t| t > 0.0 && t < self.t_end);
        ev.sort_by(f64::total_cmp);
        ev.dedup();
        ev
    }

    /// Intervals over which some disturbance varies continuously.
    pub fn varying_windows(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for s in [&self.schedule.v_pv, &self.schedule.v_b, &self.schedule.v_s, &self.schedule.r_load] {
            for w in s.knots.windows(2) {
                if w[0].1 != w[1].1 && w[1].0 > w[0].0 {
                    out.push((w[0].0, w[1].0));
                }
            }
            if let Some(sine) = s.sine {
                out.push((sine.start, sine.end));
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }
}

/// A recorded sample. Duties are the ones held over the step that starts at `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub state: AugmentedState,
    pub duties: DutyTriple,
    pub disturbance: Disturbance,
    pub z3: f64,
    pub z6: f64,
    pub z7: f64,
    pub z8: f64,
    pub interval: usize,
    /// Steps since the previous record (inclusive of this one's step) in which
    /// any raw duty left [0, 1].
    pub saturated_steps: u32,
    pub lyapunov: Option<LyapunovSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunStats {
    pub steps: usize,
    pub saturated_steps: [u64; 3],
    pub raw_min: [f64; 3],
    pub raw_max: [f64; 3],
}

impl Default for RunStats {
    fn default() -> Self {
        Self {
            steps: 0,
            saturated_steps: [0; 3],
            raw_min: [f64::INFINITY; 3],
            raw_max: [f64::NEG_INFINITY; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub h: f64,
    pub record_every: usize,
    pub records: Vec<TraceRecord>,
    pub setpoints: Vec<Setpoint>,
    pub final_t: f64,
    pub final_state: AugmentedState,
    pub stats: RunStats,
}

impl Trace {
    pub fn monitor(&self, config: MonitorConfig) -> Option<MonitorReport> {
        let points: Option<Vec<MonitorPoint>> = self
            .records
            .iter()
            .enumerate()
            .map(|(k, r)| {
                r.lyapunov.map(|v| MonitorPoint {
                    v,
                    interval: r.interval,
                    saturated_steps: r.saturated_steps,
                    disturbed: k > 0 && self.records[k - 1].disturbance != r.disturbance,
                })
            })
            .collect();
        points.map(|pts| stability::lyapunov_monitor(&pts, self.record_every, config))
    }
}

/// Advances the closed loop by one step: evaluates the controllers at `t`,
/// holds the duties and integrates the augmented state over `[t, t + h]`.
#[allow(clippy::too_many_arguments)]
pub fn step(
    state: &AugmentedState,
    t: f64,
    h: f64,
    sp: &Setpoint,
    gains: &GainSet,
    p: &GridParameters,
    schedule: &DisturbanceSchedule,
    scratch: &mut ControllerScratch,
) -> Result<(AugmentedState, ControlOutput)> {
    let d = schedule.at(t);
    let out = control::evaluate(state, sp, gains, p, &d, scratch, t, h).map_err(|e| e.at(t))?;
    let u = out.duties.applied;
    let active = out.integrals.active;
    let next = rk4_step(
        |tau, y| {
            let s = AugmentedState::from_array(*y);
            let dx = model::rhs_masked(&s, u, &schedule.at(tau), p, &sp.refs, gains, active)?;
            Ok(dx.to_array())
        },
        t,
        &state.to_array(),
        h,
    );
    let next = match next {
        Ok(y) => y,
        Err(GridError::InvalidState(_)) => return Err(GridError::Diverged { t }),
        Err(e) => return Err(e.at(t)),
    };
    if next.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
        return Err(GridError::Diverged { t: t + h });
    }
    Ok((AugmentedState::from_array(next), out))
}

/// Runs a scenario from t = 0 to t_end.
pub fn simulate(scenario: &Scenario) -> Result<Trace> {
    scenario.validate()?;
    let p = &scenario.params;
    let g = &scenario.gains;
    let h = scenario.h;
    let n = scenario.steps();
    let weights = LyapunovWeights::certify(g, p).ok();

    let mut interval = 0usize;
    let mut setpoints = vec![scenario.plan.entries[0].resolve(&scenario.schedule, p, scenario.bus_law)?];
    let mut state = match &scenario.initial {
        InitialCondition::Explicit(s) => *s,
        InitialCondition::ScaledEquilibrium(f) => {
            let d0 = scenario.schedule.at(0.0);
            let xe = model::equilibrium(&setpoints[0].refs, &d0, p)?.state.to_array();
            let mut x = [0.0; 9];
            for i in 0..9 {
                x[i] = xe[i] * f[i];
            }
            AugmentedState::cold(PhysicalState::from_array(x))
        }
    };
    if !state.is_finite() {
        return Err(GridError::InvalidScenario("initial state is not finite".into()));
    }

    let mut scratch = ControllerScratch::default();
    if scenario.warm_start {
        prime_history(&state, &setpoints[0], g, p, &scenario.schedule.at(0.0), &mut scratch)?;
    }

    let mut records = Vec::with_capacity(n / scenario.record_every + 2);
    let mut stats = RunStats::default();
    let mut sat_since_record = 0u32;

    for k in 0..=n {
        let t = k as f64 * h;
        // Swap references between steps once the next interval begins.
        let entries = &scenario.plan.entries;
        while interval + 1 < entries.len() && t + 0.5 * h >= entries[interval + 1].valid_from {
            interval += 1;
            let sp = entries[interval].resolve(&scenario.schedule, p, scenario.bus_law).map_err(|e| e.at(t))?;
            prime_history(&state, &sp, g, p, &scenario.schedule.at(t), &mut scratch).map_err(|e| e.at(t))?;
            setpoints.push(sp);
        }
        let sp = setpoints[interval];

        let (next, out) = if k < n {
            let (next, out) = step(&state, t, h, &sp, g, p, &scenario.schedule, &mut scratch)?;
            stats.steps += 1;
            (Some(next), out)
        } else {
            // Final sample: evaluate the controllers for the record only.
            let d = scenario.schedule.at(t);
            let out = control::evaluate(&state, &sp, g, p, &d, &mut scratch, t, h).map_err(|e| e.at(t))?;
            (None, out)
        };
        if next.is_some() {
            for i in 0..3 {
                stats.raw_min[i] = stats.raw_min[i].min(out.duties.raw[i]);
                stats.raw_max[i] = stats.raw_max[i].max(out.duties.raw[i]);
                if out.duties.saturated[i] {
                    stats.saturated_steps[i] += 1;
                }
            }
            if out.duties.any_saturated() {
                sat_since_record += 1;
            }
        }

        if k % scenario.record_every == 0 {
            let d = scenario.schedule.at(t);
            let lyapunov = weights
                .as_ref()
                .map(|w| stability::lyapunov_sample(t, &state, &sp, &d, out.u3.z7, out.u3.z8, w, p));
            records.push(TraceRecord {
                t,
                state,
                duties: out.duties,
                disturbance: d,
                z3: out.z3,
                z6: out.z6,
                z7: out.u3.z7,
                z8: out.u3.z8,
                interval,
                saturated_steps: sat_since_record,
                lyapunov,
            });
            sat_since_record = 0;
        }
        if let Some(next) = next {
            state = next;
        }
    }

    Ok(Trace {
        h,
        record_every: scenario.record_every,
        records,
        setpoints,
        final_t: n as f64 * h,
        final_state: state,
        stats,
    })
}

/// Seeds the ż7 history with its current value so that the backward
/// difference starts at zero.
fn prime_history(
    s: &AugmentedState,
    sp: &Setpoint,
    g: &GainSet,
    p: &GridParameters,
    d: &Disturbance,
    scratch: &mut ControllerScratch,
) -> Result<()> {
    let l1 = control::u1_law(s, &sp.refs, g, p, d)?;
    let l2 = control::u2_law(s, &sp.refs, g, p, d)?;
    let u = DutyTriple::from_raw([l1.raw, l2.raw, 0.5]);
    let (_, z7_dot) = control::grid_voltage_target(s, sp, g, p, d, &u)?;
    scratch.z7_dot_prev = z7_dot;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn tuned() -> GainSet {
        GainSet {
            k1: 200.0,
            kbar1: 100.0,
            k1a: 50.0,
            k3: 400.0,
            kbar3: 100.0,
            k3a: 50.0,
            k4: 200.0,
            kbar4: 100.0,
            k4a: 50.0,
            k6: 400.0,
            kbar6: 100.0,
            k6a: 50.0,
            k7: 1000.0,
            k8: 1000.0,
        }
    }

    fn hold_scenario(t_end: f64, h: f64) -> Scenario {
        Scenario {
            params: GridParameters::table(),
            gains: tuned(),
            schedule: DisturbanceSchedule::constant(Disturbance::default()),
            plan: ReferencePlan::periodic(1.0, t_end, 1000.0, &[780.0], None),
            t_end,
            h,
            record_every: 100,
            initial: InitialCondition::equilibrium(),
            warm_start: false,
            bus_law: BusLaw::Printed,
        }
    }

    #[test]
    fn rk4_on_linear_decay() {
        let y = rk4_step(|_, y: &[f64; 1]| Ok([-y[0]]), 0.0, &[1.0], 0.1).unwrap();
        let taylor = 1.0 - 0.1 + 0.01 / 2.0 - 0.001 / 6.0 + 0.0001 / 24.0;
        assert_relative_eq!(y[0], taylor, max_relative = 1e-15);
        assert!((y[0] - 0.9048375).abs() < 1e-7);
    }

    #[test]
    fn equilibrium_is_a_fixed_point_of_one_step() {
        let sc = hold_scenario(1e-3, 1e-6);
        let p = &sc.params;
        let d = sc.schedule.at(0.0);
        let sp = sc.plan.entries[0].resolve(&sc.schedule, p, sc.bus_law).unwrap();
        let xe = model::equilibrium(&sp.refs, &d, p).unwrap().state;
        let s0 = AugmentedState::cold(xe);
        let mut scratch = ControllerScratch::default();
        let (s1, out) = step(&s0, 0.0, sc.h, &sp, &sc.gains, p, &sc.schedule, &mut scratch).unwrap();
        assert!(s1.phys.max_abs_diff(&xe) < 1e-9 * xe.scale());
        assert!(!out.duties.any_saturated());
    }

    #[test]
    fn coarse_step_diverges() {
        let mut sc = hold_scenario(1e-2, 1e-5);
        sc.initial = InitialCondition::ScaledEquilibrium([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.001]);
        let err = simulate(&sc).unwrap_err();
        match err {
            GridError::Diverged { t } => assert!(t < 1e-3, "diverged late: {t}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn held_equilibrium_stays_put() {
        let sc = hold_scenario(0.1, 1e-6);
        let trace = simulate(&sc).unwrap();
        let xe = model::equilibrium(&trace.setpoints[0].refs, &Disturbance::default(), &sc.params)
            .unwrap()
            .state;
        for r in &trace.records {
            assert!(r.state.phys.max_abs_diff(&xe) < 1e-7 * xe.scale(), "t = {}", r.t);
        }
        assert_eq!(trace.records.len(), 1001);
        assert_eq!(trace.stats.saturated_steps, [0; 3]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let mut sc = hold_scenario(5e-3, 1e-6);
        sc.initial = InitialCondition::ScaledEquilibrium([1.01, 0.99, 1.02, 1.0, 1.0, 0.98, 1.0, 1.0, 0.97]);
        let a = simulate(&sc).unwrap();
        let b = simulate(&sc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn signal_steps_and_ramps() {
        let s = Signal::knots(vec![(0.0, 10.0), (0.5, 10.0), (0.5, 8.0), (1.0, 6.0)]);
        assert_eq!(s.value(0.25), 10.0);
        assert_eq!(s.value(0.5), 8.0);
        assert_eq!(s.value(0.75), 7.0);
        assert_eq!(s.value(3.0), 6.0);
        let w = Signal::constant(1.0).with_sine(Sine {
            amplitude: 2.0,
            frequency_hz: 1.0,
            start: 1.0,
            end: 2.0,
        });
        assert_eq!(w.value(0.5), 1.0);
        assert_relative_eq!(w.value(1.25), 3.0, max_relative = 1e-12);
    }

    #[test]
    fn plan_must_tile_the_horizon() {
        let mut plan = ReferencePlan::periodic(1.0, 2.0, 1000.0, &[780.0, 790.0], None);
        assert_eq!(plan.entries.len(), 2);
        assert!(plan.validate(2.0).is_ok());
        plan.entries[1].valid_from = 1.1;
        assert!(plan.validate(2.0).is_err());
    }
}
