//! TOML scenario documents.
//!
//! Every section except `[simulation]` and `[references]` is optional. Units:
//! V, A, Ω, F, H, s. Unknown keys are rejected.
//!
//! ```toml
//! schema_version = 1
//! name = "step-load"
//!
//! [simulation]
//! t_end = 1.5
//! h = 1e-6
//! record_every = 1000
//! bus_law = "centred"
//!
//! [disturbance]
//! r_load = { knots = [[0.0, 10.0], [0.5, 10.0], [0.5, 8.0]] }
//!
//! [references]
//! x9_star = 1000.0
//! period = 1.0
//! x1_star = [780.0]
//! ```

use std::fmt;
use std::ops::Range;

use dcgrid_core::engine::{DisturbanceSchedule, InitialCondition, PlanEntry, ReferencePlan, Scenario, Signal, Sine};
use dcgrid_core::references::{check_admissible, solve_x4_star};
use dcgrid_core::{AugmentedState, BusLaw, GainSet, GridError, GridParameters, PhysicalState};
use serde::Deserialize;
use toml::Spanned;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: Spanned<u32>,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    pub simulation: Spanned<SimulationSpec>,
    #[serde(default)]
    pub parameters: Option<Spanned<ParameterSpec>>,
    #[serde(default)]
    pub gains: Option<Spanned<GainSpec>>,
    #[serde(default)]
    pub disturbance: Option<Spanned<DisturbanceSpec>>,
    pub references: Spanned<ReferenceSpec>,
    #[serde(default)]
    pub initial: Option<Spanned<InitialSpec>>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_h() -> f64 {
    1e-6
}

fn default_record_every() -> usize {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub t_end: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub warm_start: bool,
    /// `"printed"` (default) or `"centred"`.
    #[serde(default)]
    pub bus_law: Option<String>,
}

/// Overrides of the table circuit values.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpec {
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c4: Option<f64>,
    pub c5: Option<f64>,
    pub c7: Option<f64>,
    pub c9: Option<f64>,
    pub l3: Option<f64>,
    pub l6: Option<f64>,
    pub l8: Option<f64>,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub r4: Option<f64>,
    pub r5: Option<f64>,
    pub r7: Option<f64>,
    pub r01: Option<f64>,
    pub r02: Option<f64>,
    pub r04: Option<f64>,
    pub r08: Option<f64>,
}

/// Gains; any omitted gain takes its proof-default value.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    pub k1: Option<f64>,
    pub kbar1: Option<f64>,
    pub k1a: Option<f64>,
    pub k3: Option<f64>,
    pub kbar3: Option<f64>,
    pub k3a: Option<f64>,
    pub k4: Option<f64>,
    pub kbar4: Option<f64>,
    pub k4a: Option<f64>,
    pub k6: Option<f64>,
    pub kbar6: Option<f64>,
    pub k6a: Option<f64>,
    pub k7: Option<f64>,
    pub k8: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineSpec {
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub knots: Vec<[f64; 2]>,
    #[serde(default)]
    pub sine: Option<SineSpec>,
}

/// A constant or a piecewise-linear profile with an optional sinusoid.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SignalSpec {
    Constant(f64),
    Profile(ProfileSpec),
}

impl SignalSpec {
    fn to_signal(&self) -> Signal {
        match self {
            SignalSpec::Constant(v) => Signal::constant(*v),
            SignalSpec::Profile(p) => Signal {
                knots: p.knots.iter().map(|k| (k[0], k[1])).collect(),
                sine: p.sine.as_ref().map(|s| Sine {
                    amplitude: s.amplitude,
                    frequency_hz: s.frequency_hz,
                    start: s.start,
                    end: s.end,
                }),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    #[serde(default = "default_v_pv")]
    pub v_pv: SignalSpec,
    #[serde(default = "default_v_b")]
    pub v_b: SignalSpec,
    #[serde(default = "default_v_s")]
    pub v_s: SignalSpec,
    /// Ohms; `inf` disconnects the load.
    #[serde(default = "default_r_load")]
    pub r_load: SignalSpec,
}

fn default_v_pv() -> SignalSpec {
    SignalSpec::Constant(800.0)
}

fn default_v_b() -> SignalSpec {
    SignalSpec::Constant(600.0)
}

fn default_v_s() -> SignalSpec {
    SignalSpec::Constant(1500.0)
}

fn default_r_load() -> SignalSpec {
    SignalSpec::Constant(10.0)
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            v_pv: default_v_pv(),
            v_b: default_v_b(),
            v_s: default_v_s(),
            r_load: default_r_load(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// References for consecutive intervals of length `period` (one interval
/// covering the whole run when omitted). Lists shorter than the number of
/// intervals repeat their last value; a missing x4* is solved from the
/// current balance at the start of each interval.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub x9_star: f64,
    pub x1_star: OneOrMany,
    #[serde(default)]
    pub x4_star: Option<OneOrMany>,
    #[serde(default)]
    pub period: Option<f64>,
    /// Supercapacitor power limit for the energy-balance check, W.
    #[serde(default = "default_sc_power")]
    pub sc_power_limit: f64,
}

fn default_sc_power() -> f64 {
    10_000.0
}

/// Either nine multiplicative factors applied to the first equilibrium or an
/// explicit state of 9 (integrals cold) or 13 values.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub scale: Option<[f64; 9]>,
    #[serde(default)]
    pub state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "yes")]
    pub plots: bool,
    #[serde(default)]
    pub strict_lyapunov: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            plots: true,
            strict_lyapunov: false,
        }
    }
}

/// Command-line overrides applied before validation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub h: Option<f64>,
    pub t_end: Option<f64>,
    pub record_every: Option<usize>,
    pub bus_law: Option<BusLaw>,
}

/// A validated scenario plus the file's descriptive and output fields.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub name: String,
    pub description: String,
    pub scenario: Scenario,
    pub output: OutputSpec,
    pub sc_power_limit: f64,
}

fn line_of(src: &str, span: Range<usize>) -> usize {
    src[..span.start.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl ScenarioFile {
    pub fn parse(src: &str) -> Result<Self, ScenarioError> {
        toml::from_str(src).map_err(|e| ScenarioError {
            line: e.span().map(|s| line_of(src, s)),
            message: e.message().trim().to_string(),
        })
    }

    /// Builds and validates the scenario. Every reference interval is checked
    /// for admissibility with the disturbance at its start.
    pub fn build(&self, src: &str, ov: Overrides) -> Result<LoadedScenario, ScenarioError> {
        self.build_inner(src, ov, true)
    }

    /// Like [`ScenarioFile::build`] but leaves reference admissibility to the caller.
    pub fn build_unchecked(&self, src: &str, ov: Overrides) -> Result<LoadedScenario, ScenarioError> {
        self.build_inner(src, ov, false)
    }

    fn build_inner(&self, src: &str, ov: Overrides, check: bool) -> Result<LoadedScenario, ScenarioError> {
        let at = |span: Range<usize>| {
            let line = Some(line_of(src, span));
            move |e: GridError| ScenarioError {
                line,
                message: e.to_string(),
            }
        };
        let msg_at = |span: Range<usize>, message: String| ScenarioError {
            line: Some(line_of(src, span)),
            message,
        };

        if *self.schema_version.get_ref() != SCHEMA_VERSION {
            return Err(msg_at(
                self.schema_version.span(),
                format!(
                    "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                    self.schema_version.get_ref()
                ),
            ));
        }

        let sim = self.simulation.get_ref();
        let sim_span = self.simulation.span();
        let bus_law = match (ov.bus_law, &sim.bus_law) {
            (Some(l), _) => l,
            (None, Some(s)) => s.parse().map_err(at(sim_span.clone()))?,
            (None, None) => BusLaw::Printed,
        };
        let t_end = ov.t_end.unwrap_or(sim.t_end);
        let h = ov.h.unwrap_or(sim.h);
        let record_every = ov.record_every.unwrap_or(sim.record_every);

        let mut params = GridParameters::table();
        if let Some(ps) = &self.parameters {
            apply_parameters(&mut params, ps.get_ref());
            params.validate().map_err(at(ps.span()))?;
        }

        let mut gains = GainSet::proof_defaults(&params);
        if let Some(gs) = &self.gains {
            apply_gains(&mut gains, gs.get_ref());
            gains.validate().map_err(at(gs.span()))?;
        }

        let (dist, dist_span) = match &self.disturbance {
            Some(d) => (d.get_ref().clone(), d.span()),
            None => (DisturbanceSpec::default(), 0..0),
        };
        let schedule = DisturbanceSchedule {
            v_pv: dist.v_pv.to_signal(),
            v_b: dist.v_b.to_signal(),
            v_s: dist.v_s.to_signal(),
            r_load: dist.r_load.to_signal(),
        };
        schedule.validate().map_err(at(dist_span.clone()))?;

        let refs = self.references.get_ref();
        let ref_span = self.references.span();
        let x1 = refs.x1_star.values();
        if x1.is_empty() {
            return Err(msg_at(ref_span, "x1_star must not be empty".into()));
        }
        let x4 = refs.x4_star.as_ref().map(OneOrMany::values);
        if x4.as_ref().is_some_and(|v| v.is_empty()) {
            return Err(msg_at(ref_span, "x4_star must not be empty".into()));
        }
        let period = match refs.period {
            Some(p) if !(p > 0.0) => return Err(msg_at(ref_span, format!("period = {p} must be positive"))),
            Some(p) => p,
            None => t_end,
        };
        if !(t_end > 0.0) {
            return Err(msg_at(sim_span, format!("t_end = {t_end} must be positive")));
        }
        let plan = ReferencePlan::periodic(period, t_end, refs.x9_star, &x1, x4.as_deref());
        if !(refs.sc_power_limit >= 0.0) {
            return Err(msg_at(ref_span, "sc_power_limit must be non-negative".into()));
        }
        for entry in plan.entries.iter().filter(|_| check) {
            check_entry(entry, &schedule, &params).map_err(|e| {
                let span = if matches!(e, GridError::OutsideOmegaRl(_)) && !dist_span.is_empty() {
                    dist_span.clone()
                } else {
                    ref_span.clone()
                };
                ScenarioError {
                    line: Some(line_of(src, span)),
                    message: format!("interval starting at t = {} s: {e}", entry.valid_from),
                }
            })?;
        }

        let initial = match &self.initial {
            None => InitialCondition::equilibrium(),
            Some(i) => {
                let spec = i.get_ref();
                match (&spec.scale, &spec.state) {
                    (Some(_), Some(_)) => {
                        return Err(msg_at(i.span(), "give either initial.scale or initial.state".into()))
                    }
                    (Some(f), None) => InitialCondition::ScaledEquilibrium(*f),
                    (None, Some(v)) if v.len() == 9 => {
                        let mut a = [0.0; 9];
                        a.copy_from_slice(v);
                        InitialCondition::Explicit(AugmentedState::cold(PhysicalState::from_array(a)))
                    }
                    (None, Some(v)) if v.len() == 13 => {
                        let mut a = [0.0; 13];
                        a.copy_from_slice(v);
                        InitialCondition::Explicit(AugmentedState::from_array(a))
                    }
                    (None, Some(v)) => {
                        return Err(msg_at(
                            i.span(),
                            format!("initial.state needs 9 or 13 values, got {}", v.len()),
                        ))
                    }
                    (None, None) => InitialCondition::equilibrium(),
                }
            }
        };

        let scenario = Scenario {
            params,
            gains,
            schedule,
            plan,
            t_end,
            h,
            record_every,
            initial,
            warm_start: sim.warm_start,
            bus_law,
        };
        scenario.validate().map_err(at(self.simulation.span()))?;

        Ok(LoadedScenario {
            name: self.name.clone().unwrap_or_else(|| "scenario".into()),
            description: self.description.clone().unwrap_or_default(),
            scenario,
            output: self.output.clone(),
            sc_power_limit: refs.sc_power_limit,
        })
    }
}

fn check_entry(entry: &PlanEntry, schedule: &DisturbanceSchedule, p: &GridParameters) -> Result<(), GridError> {
    let d = schedule.at(entry.valid_from);
    d.validate()?;
    let x4 = match entry.x4_star {
        Some(v) => v,
        None => solve_x4_star(entry.x1_star, entry.x9_star, &d, p)?.x4_star,
    };
    let refs = dcgrid_core::ReferenceSet::new(entry.x1_star, x4, entry.x9_star);
    check_admissible(&refs, &d, p)
}

fn apply_parameters(p: &mut GridParameters, s: &ParameterSpec) {
    let pairs: [(&mut f64, Option<f64>); 18] = [
        (&mut p.c1, s.c1),
        (&mut p.c2, s.c2),
        (&mut p.c4, s.c4),
        (&mut p.c5, s.c5),
        (&mut p.c7, s.c7),
        (&mut p.c9, s.c9),
        (&mut p.l3, s.l3),
        (&mut p.l6, s.l6),
        (&mut p.l8, s.l8),
        (&mut p.r1, s.r1),
        (&mut p.r2, s.r2),
        (&mut p.r4, s.r4),
        (&mut p.r5, s.r5),
        (&mut p.r7, s.r7),
        (&mut p.r01, s.r01),
        (&mut p.r02, s.r02),
        (&mut p.r04, s.r04),
        (&mut p.r08, s.r08),
    ];
    for (dst, v) in pairs {
        if let Some(v) = v {
            *dst = v;
        }
    }
}

fn apply_gains(g: &mut GainSet, s: &GainSpec) {
    let pairs: [(&mut f64, Option<f64>); 14] = [
        (&mut g.k1, s.k1),
        (&mut g.kbar1, s.kbar1),
        (&mut g.k1a, s.k1a),
        (&mut g.k3, s.k3),
        (&mut g.kbar3, s.kbar3),
        (&mut g.k3a, s.k3a),
        (&mut g.k4, s.k4),
        (&mut g.kbar4, s.kbar4),
        (&mut g.k4a, s.k4a),
        (&mut g.k6, s.k6),
        (&mut g.kbar6, s.kbar6),
        (&mut g.k6a, s.k6a),
        (&mut g.k7, s.k7),
        (&mut g.k8, s.k8),
    ];
    for (dst, v) in pairs {
        if let Some(v) = v {
            *dst = v;
        }
    }
}

/// Parses and builds in one go.
pub fn load_str(src: &str, ov: Overrides) -> Result<LoadedScenario, ScenarioError> {
    ScenarioFile::parse(src)?.build(src, ov)
}
