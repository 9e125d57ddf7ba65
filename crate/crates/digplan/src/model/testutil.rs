//! Shared random-state helpers for tests.

use nalgebra::Vector4;
use rand::rngs::StdRng;
use rand::Rng;

use super::kinematics;
use super::params::ModelParams;
use super::state::JointState;

/// Uniform sample of the admissible cylinder box, shrunk by `margin`
/// (fraction of the box span) on both sides.
pub fn random_q_l(params: &ModelParams, rng: &mut StdRng, margin: f64) -> Vector4<f64> {
    let lo = params.limits.cylinder_lower_m;
    let hi = params.limits.cylinder_upper_m;
    let mut q = Vector4::zeros();
    q[0] = rng.gen_range(-1.5..1.5);
    for j in 0..3 {
        let span = hi[j] - lo[j];
        q[j + 1] = rng.gen_range(lo[j] + margin * span..hi[j] - margin * span);
    }
    q
}

/// Random admissible joint state with bounded rates.
pub fn random_joint_state(params: &ModelParams, rng: &mut StdRng) -> JointState {
    let q_l = random_q_l(params, rng, 0.02);
    let q = kinematics::cylinder_to_joint(params, &q_l).unwrap();
    let dq = Vector4::new(
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
    );
    JointState::new(q, dq)
}
