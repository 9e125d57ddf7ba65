//! Closed-chain kinematics between joint-angle and cylinder coordinates.
//!
//! Each of the boom, arm and bucket joints is driven by a cylinder closing a
//! triangle with fixed side lengths `a`, `b`; the opening angle is
//! `phi0 + theta`, so the cylinder length follows the law of cosines
//!
//! ```text
//! L = sqrt(a^2 + b^2 - 2 a b cos(phi0 + theta))
//! ```
//!
//! which is strictly monotone in `theta` while `phi0 + theta` stays in
//! `(0, pi)`. The swing coordinate is shared by both descriptions.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use super::params::ModelParams;
use super::state::TipPose;
use crate::error::ModelError;

pub const LINKAGE_NAMES: [&str; 3] = ["boom", "arm", "bucket"];

/// Guard below which `sin(phi0 + theta)` counts as singular.
pub const SINGULARITY_GUARD: f64 = 1e-9;

/// Map a joint configuration to cylinder coordinates (`g_theta`).
pub fn joint_to_cylinder(params: &ModelParams, q_theta: &Vector4<f64>) -> Result<Vector4<f64>, ModelError> {
    let mut q_l = Vector4::zeros();
    q_l[0] = q_theta[0];
    for (j, link) in params.links().iter().enumerate() {
        let opening = link.linkage_angle_offset_rad + q_theta[j + 1];
        if opening <= 0.0 || opening >= std::f64::consts::PI {
            return Err(ModelError::LinkageAngleOutOfRange {
                linkage: LINKAGE_NAMES[j],
                angle: opening,
            });
        }
        let (a, b) = (link.linkage_a_m, link.linkage_b_m);
        q_l[j + 1] = (a * a + b * b - 2.0 * a * b * opening.cos()).sqrt();
    }
    Ok(q_l)
}

/// Map a cylinder configuration to joint coordinates (`g_L`).
pub fn cylinder_to_joint(params: &ModelParams, q_l: &Vector4<f64>) -> Result<Vector4<f64>, ModelError> {
    let mut q_theta = Vector4::zeros();
    q_theta[0] = q_l[0];
    for (j, link) in params.links().iter().enumerate() {
        let (a, b) = (link.linkage_a_m, link.linkage_b_m);
        let len = q_l[j + 1];
        if len <= (a - b).abs() || len >= a + b {
            return Err(ModelError::TriangleViolation {
                linkage: LINKAGE_NAMES[j],
                length: len,
                min: (a - b).abs(),
                max: a + b,
            });
        }
        let cos_opening = (a * a + b * b - len * len) / (2.0 * a * b);
        q_theta[j + 1] = cos_opening.acos() - link.linkage_angle_offset_rad;
    }
    Ok(q_theta)
}

/// The kinematic Jacobians at matched configurations.
#[derive(Debug, Clone, Copy)]
pub struct Jacobians {
    /// `dq_theta = J_L dq_L`, diagonal with a unit swing entry.
    pub j_l: Matrix4<f64>,
    /// `dq_L = J_theta dq_theta`, the inverse of `j_l`.
    pub j_theta: Matrix4<f64>,
}

impl Jacobians {
    /// Time derivative of `J_L` given the cylinder rates.
    pub fn j_l_dot(&self, params: &ModelParams, q_l: &Vector4<f64>, dq_l: &Vector4<f64>) -> Matrix4<f64> {
        let mut out = Matrix4::zeros();
        for (j, link) in params.links().iter().enumerate() {
            let (a, b) = (link.linkage_a_m, link.linkage_b_m);
            let len = q_l[j + 1];
            let cos_opening = (a * a + b * b - len * len) / (2.0 * a * b);
            let sin_opening = (1.0 - cos_opening * cos_opening).max(0.0).sqrt();
            let dtheta_dl = self.j_l[(j + 1, j + 1)];
            let dlen = dq_l[j + 1];
            let dtheta = dtheta_dl * dlen;
            // d/dt [ L / (a b sin) ] = Ldot/(a b sin) - L cos * thetadot /(a b sin^2)
            out[(j + 1, j + 1)] =
                dlen / (a * b * sin_opening) - len * cos_opening * dtheta / (a * b * sin_opening * sin_opening);
        }
        out
    }
}

/// Compute `J_L` and `J_theta` at a cylinder configuration.
pub fn jacobians(params: &ModelParams, q_l: &Vector4<f64>) -> Result<Jacobians, ModelError> {
    let mut j_l = Matrix4::identity();
    let mut j_theta = Matrix4::identity();
    for (j, link) in params.links().iter().enumerate() {
        let (a, b) = (link.linkage_a_m, link.linkage_b_m);
        let len = q_l[j + 1];
        let cos_opening = (a * a + b * b - len * len) / (2.0 * a * b);
        let sin_opening = (1.0 - cos_opening * cos_opening).max(0.0).sqrt();
        if sin_opening < SINGULARITY_GUARD {
            return Err(ModelError::NearSingularity {
                linkage: LINKAGE_NAMES[j],
                sine: sin_opening,
            });
        }
        let dtheta_dl = len / (a * b * sin_opening);
        j_l[(j + 1, j + 1)] = dtheta_dl;
        j_theta[(j + 1, j + 1)] = 1.0 / dtheta_dl;
    }
    Ok(Jacobians { j_l, j_theta })
}

/// Cumulative link angles `[theta_B, theta_B+theta_A, theta_B+theta_A+theta_K]`.
pub fn cumulative_angles(q_theta: &Vector4<f64>) -> [f64; 3] {
    let phi_b = q_theta[1];
    let phi_a = phi_b + q_theta[2];
    let phi_k = phi_a + q_theta[3];
    [phi_b, phi_a, phi_k]
}

/// Forward kinematics of the bucket tip from the cylinder sub-configuration.
pub fn tip_pose(params: &ModelParams, q_l: &Vector4<f64>) -> Result<TipPose, ModelError> {
    let q_theta = cylinder_to_joint(params, q_l)?;
    Ok(tip_pose_from_joints(params, &q_theta))
}

/// Forward kinematics of the bucket tip from joint angles.
pub fn tip_pose_from_joints(params: &ModelParams, q_theta: &Vector4<f64>) -> TipPose {
    let [phi_b, phi_a, phi_k] = cumulative_angles(q_theta);
    let x = params.boom_pivot_x_m
        + params.boom.length_m * phi_b.cos()
        + params.arm.length_m * phi_a.cos()
        + params.bucket.length_m * phi_k.cos();
    let z = params.boom_pivot_z_m
        + params.boom.length_m * phi_b.sin()
        + params.arm.length_m * phi_a.sin()
        + params.bucket.length_m * phi_k.sin();
    TipPose { x, z, theta: phi_k }
}

/// Planar tip Jacobian `d(E_x, E_z, theta)/d(theta_B, theta_A, theta_K)`.
pub fn tip_jacobian_joints(params: &ModelParams, q_theta: &Vector4<f64>) -> Matrix3<f64> {
    let [phi_b, phi_a, phi_k] = cumulative_angles(q_theta);
    let lb = params.boom.length_m;
    let la = params.arm.length_m;
    let lk = params.bucket.length_m;
    // dE/dtheta_j sums the contributions of every link at or beyond j.
    let dx = [
        -lb * phi_b.sin() - la * phi_a.sin() - lk * phi_k.sin(),
        -la * phi_a.sin() - lk * phi_k.sin(),
        -lk * phi_k.sin(),
    ];
    let dz = [
        lb * phi_b.cos() + la * phi_a.cos() + lk * phi_k.cos(),
        la * phi_a.cos() + lk * phi_k.cos(),
        lk * phi_k.cos(),
    ];
    Matrix3::new(
        dx[0], dx[1], dx[2], //
        dz[0], dz[1], dz[2], //
        1.0, 1.0, 1.0,
    )
}

/// Tip Jacobian with respect to the cylinder lengths `[L_B, L_A, L_K]`.
pub fn tip_jacobian_lengths(params: &ModelParams, q_l: &Vector4<f64>) -> Result<Matrix3<f64>, ModelError> {
    let q_theta = cylinder_to_joint(params, q_l)?;
    let jac = jacobians(params, q_l)?;
    let planar = tip_jacobian_joints(params, &q_theta);
    let scale = Matrix3::from_diagonal(&Vector3::new(
        jac.j_l[(1, 1)],
        jac.j_l[(2, 2)],
        jac.j_l[(3, 3)],
    ));
    Ok(planar * scale)
}

/// Invert the tip kinematics: find joint angles reaching `(x, z)` with bucket
/// rotation `theta`, using the arm-folded-under branch (`theta_A < 0`).
pub fn tip_ik(params: &ModelParams, pose: &TipPose) -> Result<Vector4<f64>, ModelError> {
    let unreachable = |reason: &'static str| ModelError::Unreachable {
        x: pose.x,
        z: pose.z,
        theta: pose.theta,
        reason,
    };
    let lb = params.boom.length_m;
    let la = params.arm.length_m;
    let lk = params.bucket.length_m;
    // Bucket pin position.
    let px = pose.x - lk * pose.theta.cos() - params.boom_pivot_x_m;
    let pz = pose.z - lk * pose.theta.sin() - params.boom_pivot_z_m;
    let d2 = px * px + pz * pz;
    let cos_elbow = (d2 - lb * lb - la * la) / (2.0 * lb * la);
    if !(-1.0..=1.0).contains(&cos_elbow) {
        return Err(unreachable("bucket pin outside boom-arm annulus"));
    }
    let theta_a = -cos_elbow.acos();
    let theta_b = pz.atan2(px) - (la * theta_a.sin()).atan2(lb + la * theta_a.cos());
    let theta_k = pose.theta - theta_b - theta_a;
    let q = Vector4::new(0.0, theta_b, theta_a, theta_k);
    // Reject solutions outside the linkage-monotone range.
    for (j, link) in params.links().iter().enumerate() {
        let opening = link.linkage_angle_offset_rad + q[j + 1];
        if opening <= 0.0 || opening >= std::f64::consts::PI {
            return Err(unreachable("joint solution outside linkage range"));
        }
    }
    Ok(q)
}
