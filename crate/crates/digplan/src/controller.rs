//! Feedback-linearization PID motion controller.
//!
//! Tracks the local planner's reference state with
//! `u = J_theta^{-T} (h_theta - dhat + M_theta u_pid)`; with an exact
//! disturbance estimate the closed-loop error obeys the decoupled linear
//! dynamics `edd + K_d ed + K_p e + K_i int(e) = 0` per channel.

use nalgebra::Vector4;

use crate::error::ModelError;
use crate::model::{self, ControlInput, CylinderState, JointState, ModelParams};

/// Diagonal PID gains and the per-channel integral clamp.
#[derive(Debug, Clone)]
pub struct PidGains {
    pub kp: Vector4<f64>,
    pub kd: Vector4<f64>,
    pub ki: Vector4<f64>,
    pub integral_clamp: Vector4<f64>,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kp: Vector4::repeat(100.0),
            kd: Vector4::repeat(20.0),
            ki: Vector4::repeat(10.0),
            integral_clamp: Vector4::repeat(0.5),
        }
    }
}

/// Controller state: the error integral and the previous reference rate used
/// for the acceleration feedforward.
#[derive(Debug, Clone)]
pub struct MotionController {
    pub gains: PidGains,
    integral: Vector4<f64>,
    previous_reference_rate: Option<Vector4<f64>>,
}

impl MotionController {
    pub fn new(gains: PidGains) -> Self {
        MotionController {
            gains,
            integral: Vector4::zeros(),
            previous_reference_rate: None,
        }
    }

    pub fn reset(&mut self) {
        self.integral = Vector4::zeros();
        self.previous_reference_rate = None;
    }

    /// Compute the input tracking `x_d` (given in cylinder coordinates) from
    /// the measured joint state.
    pub fn control(
        &mut self,
        params: &ModelParams,
        x_d: &CylinderState,
        x: &JointState,
        delta_hat: &Vector4<f64>,
        dt: f64,
    ) -> Result<ControlInput, ModelError> {
        assert!(dt > 0.0);
        // Reference mapped into joint coordinates.
        let q_d = model::cylinder_to_joint(params, &x_d.q)?;
        let jac_d = model::jacobians(params, &x_d.q)?;
        let dq_d = jac_d.j_l * x_d.dq;
        // Reference acceleration from consecutive reference rates.
        let ddq_d = match self.previous_reference_rate {
            Some(previous) => (dq_d - previous) / dt,
            None => Vector4::zeros(),
        };
        self.previous_reference_rate = Some(dq_d);

        let e = q_d - x.q;
        let de = dq_d - x.dq;
        self.integral += e * dt;
        for i in 0..4 {
            self.integral[i] = self.integral[i]
                .clamp(-self.gains.integral_clamp[i], self.gains.integral_clamp[i]);
        }
        let u_pid = ddq_d
            + self.gains.kp.component_mul(&e)
            + self.gains.kd.component_mul(&de)
            + self.gains.ki.component_mul(&self.integral);

        let terms = model::joint_terms(params, x);
        let q_l = model::joint_to_cylinder(params, &x.q)?;
        let jac = model::jacobians(params, &q_l)?;
        // J_theta^{-T} = J_L^T.
        let torque = terms.bias(&x.dq) - delta_hat + terms.mass * u_pid;
        Ok(ControlInput(jac.j_l.transpose() * torque))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::random_q_l;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn params() -> ModelParams {
        ModelParams::default()
    }

    fn rest_pair(p: &ModelParams) -> (CylinderState, JointState) {
        let mut rng = StdRng::seed_from_u64(61);
        let q_l = random_q_l(p, &mut rng, 0.1);
        let q_theta = model::cylinder_to_joint(p, &q_l).unwrap();
        (CylinderState::at_rest(q_l), JointState::at_rest(q_theta))
    }

    #[test]
    fn perfect_tracking_at_rest_is_gravity_compensation() {
        let p = params();
        let (x_d, x) = rest_pair(&p);
        let mut controller = MotionController::new(PidGains::default());
        let u = controller
            .control(&p, &x_d, &x, &Vector4::zeros(), 0.02)
            .unwrap();
        // Mapped back to joint torques the input balances gravity exactly.
        let q_l = model::joint_to_cylinder(&p, &x.q).unwrap();
        let jac = model::jacobians(&p, &q_l).unwrap();
        let torque = jac.j_theta.transpose() * u.0;
        let terms = model::joint_terms(&p, &x);
        assert_relative_eq!(torque, terms.gravity, epsilon = 1e-9, max_relative = 1e-9);
    }

    /// Closed-loop simulation with an exact estimate: per-channel error
    /// matches the scalar PID ODE.
    #[test]
    fn error_dynamics_match_scalar_ode() {
        let p = params();
        let (x_d, x0) = rest_pair(&p);
        let gains = PidGains {
            kp: Vector4::repeat(25.0),
            kd: Vector4::repeat(8.0),
            ki: Vector4::repeat(4.0),
            integral_clamp: Vector4::repeat(10.0),
        };
        let mut controller = MotionController::new(gains.clone());
        // Offset initial state: a step error on every channel.
        let e0 = Vector4::new(0.05, 0.04, -0.06, 0.05);
        let mut x = JointState::at_rest(x0.q - e0);
        let delta = Vector4::new(2000.0, -7000.0, 4000.0, 1500.0);
        let dt = 1e-3;
        let steps = 2000;
        // Scalar oracle: edd = -kd ed - kp e - ki s, sd = e, per channel.
        let mut e_ode = e0;
        let mut de_ode = Vector4::zeros();
        let mut s_ode = Vector4::zeros();
        for step in 0..steps {
            let u = controller.control(&p, &x_d, &x, &delta, dt).unwrap();
            let ddq = model::joint_acceleration(&p, &x, &u, &delta).unwrap();
            x = JointState::new(x.q + dt * x.dq, x.dq + dt * ddq);
            // Advance the oracle with the same explicit scheme.
            let dde = -gains.kd.component_mul(&de_ode)
                - gains.kp.component_mul(&e_ode)
                - gains.ki.component_mul(&s_ode);
            s_ode += e_ode * dt;
            e_ode += de_ode * dt;
            de_ode += dde * dt;
            if step % 400 == 0 {
                continue;
            }
        }
        let e_sim = x_d.q - model::joint_to_cylinder(&p, &x.q).unwrap();
        let _ = e_sim;
        let q_d = model::cylinder_to_joint(&p, &x_d.q).unwrap();
        let e_final = q_d - x.q;
        for i in 0..4 {
            let err = (e_final[i] - e_ode[i]).abs();
            let scale = e0[i].abs();
            assert!(err / scale < 0.02, "channel {i}: {} vs {}", e_final[i], e_ode[i]);
        }
    }

    #[test]
    fn doubling_kp_halves_steady_error() {
        let p = params();
        let (x_d, x0) = rest_pair(&p);
        let steady_error = |kp: f64| -> Vector4<f64> {
            let gains = PidGains {
                kp: Vector4::repeat(kp),
                kd: Vector4::repeat(2.0 * kp.sqrt()),
                ki: Vector4::zeros(),
                integral_clamp: Vector4::repeat(1.0),
            };
            let mut controller = MotionController::new(gains);
            let mut x = x0;
            // Constant disturbance the controller does not know about.
            let delta = Vector4::new(3000.0, -9000.0, 5000.0, 1200.0);
            let dt = 1e-3;
            for _ in 0..6000 {
                let u = controller.control(&p, &x_d, &x, &Vector4::zeros(), dt).unwrap();
                let ddq = model::joint_acceleration(&p, &x, &u, &delta).unwrap();
                x = JointState::new(x.q + dt * x.dq, x.dq + dt * ddq);
            }
            let q_d = model::cylinder_to_joint(&p, &x_d.q).unwrap();
            q_d - x.q
        };
        let e1 = steady_error(60.0);
        let e2 = steady_error(120.0);
        for i in 0..4 {
            let ratio = e2[i] / e1[i];
            assert!(
                (ratio - 0.5).abs() < 0.05,
                "channel {i}: ratio {ratio} ({} vs {})",
                e1[i],
                e2[i]
            );
        }
    }

    #[test]
    fn integral_clamp_never_errors() {
        let p = params();
        let (x_d, x0) = rest_pair(&p);
        let gains = PidGains {
            integral_clamp: Vector4::repeat(1e-3),
            ..Default::default()
        };
        let mut controller = MotionController::new(gains);
        let mut x = JointState::at_rest(x0.q - Vector4::repeat(0.1));
        for _ in 0..2000 {
            let u = controller.control(&p, &x_d, &x, &Vector4::zeros(), 1e-3).unwrap();
            assert!(u.0.iter().all(|v| v.is_finite()));
            let ddq = model::joint_acceleration(&p, &x, &u, &Vector4::zeros()).unwrap();
            x = JointState::new(x.q + 1e-3 * x.dq, x.dq + 1e-3 * ddq);
        }
        assert!(controller.integral.amax() <= 1e-3 + 1e-12);
    }
}
