//! State and input types in both coordinate descriptions.

use nalgebra::Vector4;

/// Configuration and rate in joint-angle coordinates
/// `[psi_U, theta_B, theta_A, theta_K]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub q: Vector4<f64>,
    pub dq: Vector4<f64>,
}

/// Configuration and rate in cylinder coordinates
/// `[psi_U, L_B, L_A, L_K]` (rad, m, m, m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylinderState {
    pub q: Vector4<f64>,
    pub dq: Vector4<f64>,
}

/// Swing torque plus the three cylinder forces `[N m, N, N, N]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput(pub Vector4<f64>);

/// Bucket tip pose in the cabin frame: position (m) and plate-carrier
/// rotation `theta = theta_B + theta_A + theta_K` (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipPose {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
}

impl JointState {
    pub fn new(q: Vector4<f64>, dq: Vector4<f64>) -> Self {
        Self { q, dq }
    }

    pub fn at_rest(q: Vector4<f64>) -> Self {
        Self {
            q,
            dq: Vector4::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.dq.iter()).all(|v| v.is_finite())
    }
}

impl CylinderState {
    pub fn new(q: Vector4<f64>, dq: Vector4<f64>) -> Self {
        Self { q, dq }
    }

    pub fn at_rest(q: Vector4<f64>) -> Self {
        Self {
            q,
            dq: Vector4::zeros(),
        }
    }

    /// The cylinder sub-configuration `[L_B, L_A, L_K]`.
    pub fn lengths(&self) -> [f64; 3] {
        [self.q[1], self.q[2], self.q[3]]
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.dq.iter()).all(|v| v.is_finite())
    }
}

impl ControlInput {
    pub fn zero() -> Self {
        ControlInput(Vector4::zeros())
    }
}

impl std::ops::Deref for ControlInput {
    type Target = Vector4<f64>;
    fn deref(&self) -> &Self::Target {
        &self.0
    }
}
