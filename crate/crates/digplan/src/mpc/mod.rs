//! Receding-horizon tracking of the global trajectory: feedback
//! linearization, the constrained DDP solver and the planner loop glue.

pub mod ddp;
pub mod fl;
pub mod planner;

pub use ddp::{solve_al_ddp, DdpConfig, DdpSolution, Multipliers, NoConstraints, StageConstraints};
pub use fl::{discretize, feedback_linearize};
pub use planner::{
    pack_state, unpack_state, ExcavatorConstraints, MpcConfig, MpcPlanner, MpcSolution, PlanStep,
};
