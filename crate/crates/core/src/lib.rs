//! Diffusions in random environment: environment fields, path simulation,
//! regeneration structure and ensemble statistics.

pub mod coupling_regen;
pub mod encounter2d;
pub mod env_field;
pub mod error;
pub mod harness;
pub mod path_events;
pub mod plots;
pub mod renewal_stats;
pub mod rng;
pub mod sde_sim;
pub mod stats;

pub use coupling_regen::{CoupledTrajectory, CouplingConfig, CouplingMode, DStatus, RegenerationRecord};
pub use env_field::{CoefficientField, Environment, EnvironmentMode, EnvironmentSpec};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, ExperimentKind, ResultEnvelope};
pub use path_events::{HValue, OscillationStats, SlabSpec};
pub use renewal_stats::{EscapeLabel, TestReport, VelocityEstimate, Verdict, ZeroOneReport};
pub use sde_sim::{SimConfig, Trajectory};
pub use stats::Proportion;
