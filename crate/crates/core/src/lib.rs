//! Uplink channel estimation and downlink channel prediction for
//! multi-user massive MIMO-OTFS links.
//!
//! The uplink pipeline forms compressed measurements from a hybrid pilot
//! frame, recovers block-sparse basis coefficients with a greedy pursuit and
//! refines them jointly with data detection. The downlink pipeline projects
//! the uplink estimates on a Slepian basis and extrapolates the coefficient
//! trajectory.

pub mod acceptance;
pub mod basis;
pub mod channel;
pub mod config;
pub mod dsp;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod metrics;
pub mod otfs;
pub mod pilot;
pub mod predictor;

pub use config::SimConfig;
pub use error::{ConfigError, Result, SimError};
