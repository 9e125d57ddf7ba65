//! Feedback linearization of the cylinder-coordinate dynamics and the exact
//! discretization of the resulting double integrator.

use nalgebra::{SMatrix, Vector4};

use crate::error::ModelError;
use crate::model::{self, ControlInput, CylinderState, ModelParams};

/// The input transformation `u = h_L + M_L v - Delta_hat_L`, which turns the
/// cylinder dynamics into `qddot_L = v` when the disturbance estimate is
/// exact.
pub fn feedback_linearize(
    params: &ModelParams,
    x: &CylinderState,
    v: &Vector4<f64>,
    delta_hat_l: &Vector4<f64>,
) -> Result<ControlInput, ModelError> {
    let terms = model::cylinder_terms(params, x)?;
    Ok(ControlInput(terms.bias + terms.mass * v - delta_hat_l))
}

/// Exact zero-order-hold discretization of the double integrator.
pub fn discretize(dt: f64) -> (SMatrix<f64, 8, 8>, SMatrix<f64, 8, 4>) {
    assert!(dt > 0.0);
    let mut a = SMatrix::<f64, 8, 8>::identity();
    let mut b = SMatrix::<f64, 8, 4>::zeros();
    for i in 0..4 {
        a[(i, 4 + i)] = dt;
        b[(i, i)] = 0.5 * dt * dt;
        b[(4 + i, i)] = dt;
    }
    (a, b)
}
