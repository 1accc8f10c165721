use thiserror::Error;

/// Errors raised by the model, reference solver, controllers and engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("no steady state for given references ({0})")]
    NoSteadyState(String),

    #[error("degenerate equilibrium: {0}")]
    DegenerateEquilibrium(String),

    #[error("singular PV duty denominator (|x2+(R01-R02)x3| = {0:e})")]
    SingularPvDuty(f64),

    #[error("singular battery duty denominator (|x5| = {0:e})")]
    SingularBatteryDuty(f64),

    #[error("singular grid/source voltage (x9 = {x9:e}, V_S = {v_s:e})")]
    SingularGridVoltage { x9: f64, v_s: f64 },

    #[error("R_L outside Ω_RL: {0}")]
    OutsideOmegaRl(String),

    #[error("inadmissible references: {0}")]
    Inadmissible(String),

    #[error("Lyapunov equation has no PD solution: {0}")]
    NotHurwitz(String),

    #[error("integration diverged (reduce h) at t = {t:.9} s")]
    Diverged { t: f64 },

    #[error("at t = {t:.9} s: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<GridError>,
    },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

impl GridError {
    pub fn at(self, t: f64) -> Self {
        match self {
            e @ (GridError::AtTime { .. } | GridError::Diverged { .. }) => e,
            e => GridError::AtTime {
                t,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, with any time annotation stripped.
    pub fn root(&self) -> &GridError {
        match self {
            GridError::AtTime { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T, E = GridError> = std::result::Result<T, E>;
