//! Trajectory planning and deterministic simulation for autonomous
//! hydraulic-excavator digging.
//!
//! The crate wires an online global planner (a swept-volume-maximizing
//! via-point program for the soil-cutting phase and Bernstein-polynomial
//! boundary-value problems for the approach and carry phases) into a
//! real-time feedback-linearized receding-horizon local planner with
//! momentum-based disturbance estimation, and validates the stack against a
//! plant emulator with cylinder friction and soil-bucket interaction forces.
//!
//! Start with the [`harness`] module (scenario configs and the simulation
//! loop) or the guide book under `book/` for a narrative tour.

pub mod controller;
pub mod error;
pub mod estimator;
pub mod model;
pub mod mpc;
pub mod planner;
pub mod plant;
pub mod solver;
pub mod terrain;

pub use error::{ConfigError, ModelError, PlanError, SimError, TerrainError};
