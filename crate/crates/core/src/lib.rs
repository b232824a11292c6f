//! Carrier-phase positioning for 5G NR reference signals.
//!
//! The crate covers the whole chain from a simulated subcarrier grid to a
//! fused trajectory: [`scenario`] describes the deployment, [`signal`] and
//! [`channel`] synthesize received frames, [`ranging`] turns differential
//! subcarrier phases into distances, [`classifier`] flags NLOS links,
//! [`positioning`] multilaterates, [`fusion`] runs an error-state Kalman
//! filter over IMU, visual odometry and carrier-phase fixes, and [`eval`]
//! scores trajectories. [`experiments`] wires these into reproducible
//! studies.

pub mod channel;
pub mod classifier;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod fusion;
pub mod phase;
pub mod positioning;
pub mod ranging;
pub mod rng;
pub mod scenario;
pub mod signal;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type Vec3 = nalgebra::Vector3<f64>;
