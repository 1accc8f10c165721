//! Averaged model and nonlinear controllers for a DC microgrid with PV,
//! battery and supercapacitor converters feeding a resistive load.
//!
//! - [`model`]: plant dynamics, equilibria and duty ratios
//! - [`references`]: admissible references and the energy-balance check
//! - [`control`]: backstepping duty laws and integral anti-windup
//! - [`stability`]: characteristic polynomials, Routh test and storage functions
//! - [`engine`]: fixed-step closed-loop simulation

pub mod audit;
pub mod control;
pub mod engine;
pub mod error;
pub mod model;
pub mod references;
pub mod stability;

pub use control::{BusLaw, GainSet, Setpoint};
pub use engine::{simulate, DisturbanceSchedule, InitialCondition, ReferencePlan, Scenario, Signal, Trace};
pub use error::{GridError, Result};
pub use model::{AugmentedState, Disturbance, DutyTriple, GridParameters, PhysicalState};
pub use references::ReferenceSet;
