//! Simulator and statistical-CSI optimizer for an active STAR surface aiding a
//! massive-MIMO downlink with MRT precoding.
//!
//! The pipeline is: [`scenario`] builds large-scale statistics, [`surface`]
//! holds the element coefficients and their feasible sets, [`channel`] and
//! [`estimation`] give covariances and MMSE estimates, [`spectral`] evaluates
//! the closed-form and Monte-Carlo SE, and [`optimizer`] runs projected
//! gradient ascent over the surface. [`experiment`] drives batch sweeps.

pub mod channel;
pub mod config;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod linalg;
pub mod optimizer;
pub mod parallel;
pub mod scenario;
pub mod spectral;
pub mod surface;

pub use config::ScenarioConfig;
pub use error::{Error, Result};
pub use parallel::Execution;
pub use scenario::{build_scenario, ScenarioStatistics};
pub use spectral::{evaluate_se, SEResult};
pub use surface::{Protocol, Region, SurfaceState};
