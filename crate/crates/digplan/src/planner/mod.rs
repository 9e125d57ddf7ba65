//! Global trajectory planning: cutting-phase via points, travel-phase
//! Bernstein curves, timing and phase stitching.

pub mod bernstein;
pub mod global;
pub mod phase2;
pub mod timing;

pub use bernstein::{
    plan_phase13, BernsteinCurve, Phase13Config, Phase13Plan, PhaseBoundary, TravelPhase,
};
pub use global::{assemble_global, GlobalSample, GlobalTrajectory};
pub use phase2::{plan_phase2, Phase2Plan, Phase2Problem, PHASE2_TOL};
pub use timing::{entry_rate, exit_rate, sample_knots, time_parameterize, TimedKnot};
