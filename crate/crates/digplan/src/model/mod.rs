//! Parameterized kinematics, dynamics and physical-limit evaluation for a
//! swing + boom/arm/bucket excavator with cylinder closed-chain linkages.
//!
//! Everything here is a pure function of value inputs; results are
//! deterministic and safe to evaluate from any thread.

pub mod dynamics;
pub mod kinematics;
pub mod limits;
pub mod params;
pub mod state;
#[cfg(test)]
pub(crate) mod testutil;

pub use dynamics::{
    cylinder_acceleration, cylinder_inverse_dynamics, cylinder_terms, joint_acceleration,
    joint_terms, potential_energy, total_energy, CylinderDynamics, JointDynamics,
};
pub use kinematics::{
    cylinder_to_joint, jacobians, joint_to_cylinder, tip_ik, tip_jacobian_joints,
    tip_jacobian_lengths, tip_pose, tip_pose_from_joints, Jacobians,
};
pub use limits::{constraint_residuals, family_minima, residual_scales, RESIDUAL_COUNT};
pub use params::{BucketGeometry, LinkParams, ModelParams, PhysicalLimits, PumpAreas};
pub use state::{ControlInput, CylinderState, JointState, TipPose};
