//! Momentum-based disturbance observer.
//!
//! The observer integrates the generalized-momentum balance
//!
//! ```text
//! dhat = K_E ( p - p(0) - int( J_theta' u + C' qdot - G + dhat ) dtau )
//! p    = M qdot
//! ```
//!
//! and, because `Mdot = C + C'` holds for the Christoffel Coriolis matrix,
//! behaves as a first-order low-pass of the true disturbance with per-channel
//! bandwidth `K_E`. The integral advances by the trapezoidal rule with the
//! previous estimate inside the integrand.

use nalgebra::{Matrix4, Vector4};

use crate::error::ModelError;
use crate::model::{self, JointState, ModelParams};

/// Observer state; advance it from exactly one loop.
#[derive(Debug, Clone)]
pub struct DisturbanceObserver {
    /// Diagonal gain (1/s), all entries positive.
    gain: Vector4<f64>,
    initial_momentum: Vector4<f64>,
    integral: Vector4<f64>,
    estimate: Vector4<f64>,
    /// Input coupling and state-dependent integrand parts at the previous
    /// sample. The input is applied zero-order-hold, so both trapezoid
    /// endpoints of an interval must see the same `u`; the coupling is kept
    /// separate to apply the incoming interval's input to the left endpoint.
    previous: Option<(Matrix4<f64>, Vector4<f64>)>,
    /// Set when an update arrived with `dt` above a tenth of the fastest
    /// channel's time constant.
    pub rate_warning: bool,
}

impl DisturbanceObserver {
    /// Initialize at a measured state: `p(0) = M qdot`, estimate zero.
    pub fn new(params: &ModelParams, x: &JointState, gain: Vector4<f64>) -> Self {
        assert!(gain.iter().all(|g| *g > 0.0));
        let terms = model::joint_terms(params, x);
        DisturbanceObserver {
            gain,
            initial_momentum: terms.mass * x.dq,
            integral: Vector4::zeros(),
            estimate: Vector4::zeros(),
            previous: None,
            rate_warning: false,
        }
    }

    pub fn estimate(&self) -> Vector4<f64> {
        self.estimate
    }

    /// Advance the observer by `dt` with the measured state and applied
    /// input; returns the updated estimate.
    pub fn update(
        &mut self,
        params: &ModelParams,
        x: &JointState,
        u: &model::ControlInput,
        dt: f64,
    ) -> Result<Vector4<f64>, ModelError> {
        assert!(dt > 0.0);
        if dt * self.gain.max() > 0.1 {
            self.rate_warning = true;
        }
        let terms = model::joint_terms(params, x);
        let q_l = model::joint_to_cylinder(params, &x.q)?;
        let jac = model::jacobians(params, &q_l)?;
        let jt = jac.j_theta.transpose();
        // State-dependent integrand parts at the new sample; the estimate's
        // own appearance in the trapezoid is linear and solved implicitly,
        // which keeps the update second-order in dt.
        let state_terms = terms.coriolis.transpose() * x.dq - terms.gravity;
        let left = match &self.previous {
            Some((jt_prev, state_prev)) => jt_prev * u.0 + state_prev,
            None => jt * u.0 + state_terms + self.estimate,
        };
        let right_known = jt * u.0 + state_terms;
        let momentum = terms.mass * x.dq;
        let base =
            momentum - self.initial_momentum - self.integral - 0.5 * dt * (left + right_known);
        let mut estimate = Vector4::zeros();
        for i in 0..4 {
            estimate[i] = self.gain[i] * base[i] / (1.0 + 0.5 * dt * self.gain[i]);
        }
        self.integral += 0.5 * dt * (left + right_known + estimate);
        self.previous = Some((jt, state_terms + estimate));
        self.estimate = estimate;
        Ok(self.estimate)
    }

    /// Equivalent observer with the accumulated integral folded into the
    /// initial-momentum bookkeeping; continuing either instance produces the
    /// same estimates.
    pub fn rebased(&self) -> Self {
        let mut out = self.clone();
        out.initial_momentum = self.initial_momentum + self.integral;
        out.integral = Vector4::zeros();
        out
    }
}

/// Map a joint-coordinate disturbance into cylinder coordinates.
pub fn to_cylinder_frame(
    params: &ModelParams,
    delta_hat: &Vector4<f64>,
    q_l: &Vector4<f64>,
) -> Result<Vector4<f64>, ModelError> {
    let jac = model::jacobians(params, q_l)?;
    Ok(jac.j_l.transpose() * delta_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::random_q_l;
    use crate::model::{ControlInput, CylinderState};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn params() -> ModelParams {
        ModelParams::default()
    }

    /// RK4 integration of the true joint dynamics under an injected
    /// disturbance, advancing the observer in lockstep.
    fn simulate(
        p: &ModelParams,
        x0: JointState,
        u_of: impl Fn(f64, &JointState) -> ControlInput,
        delta_of: impl Fn(f64) -> Vector4<f64>,
        gain: f64,
        dt: f64,
        steps: usize,
    ) -> (Vec<f64>, Vec<Vector4<f64>>, Vec<Vector4<f64>>) {
        let mut observer = DisturbanceObserver::new(p, &x0, Vector4::repeat(gain));
        let mut x = x0;
        let mut times = Vec::with_capacity(steps);
        let mut estimates = Vec::with_capacity(steps);
        let mut truths = Vec::with_capacity(steps);
        let mut t = 0.0;
        for _ in 0..steps {
            let u = u_of(t, &x);
            let delta = delta_of(t);
            let f = |s: &JointState| {
                let ddq = model::joint_acceleration(p, s, &u, &delta).unwrap();
                (s.dq, ddq)
            };
            let (k1q, k1v) = f(&x);
            let x2 = JointState::new(x.q + 0.5 * dt * k1q, x.dq + 0.5 * dt * k1v);
            let (k2q, k2v) = f(&x2);
            let x3 = JointState::new(x.q + 0.5 * dt * k2q, x.dq + 0.5 * dt * k2v);
            let (k3q, k3v) = f(&x3);
            let x4 = JointState::new(x.q + dt * k3q, x.dq + dt * k3v);
            let (k4q, k4v) = f(&x4);
            x = JointState::new(
                x.q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
                x.dq + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
            );
            t += dt;
            let estimate = observer.update(p, &x, &u, dt).unwrap();
            times.push(t);
            estimates.push(estimate);
            truths.push(delta_of(t));
        }
        (times, estimates, truths)
    }

    fn rest_state(p: &ModelParams) -> JointState {
        let mut rng = StdRng::seed_from_u64(51);
        let q_l = random_q_l(p, &mut rng, 0.1);
        JointState::at_rest(model::cylinder_to_joint(p, &q_l).unwrap())
    }

    fn gravity_hold(p: &ModelParams, x: &JointState) -> ControlInput {
        let terms = model::joint_terms(p, x);
        let q_l = model::joint_to_cylinder(p, &x.q).unwrap();
        let jac = model::jacobians(p, &q_l).unwrap();
        // J_theta^{-T} = J_L^T maps joint torques back to the input space.
        ControlInput(jac.j_l.transpose() * terms.bias(&x.dq))
    }

    /// Gravity compensation plus a stiff PD hold toward `anchor`; keeps the
    /// long simulations inside the admissible region. The observer is
    /// input-invariant, so the extra feedback does not touch the estimates.
    fn station_keeping(p: &ModelParams, anchor: &JointState, x: &JointState) -> ControlInput {
        let terms = model::joint_terms(p, x);
        let q_l = model::joint_to_cylinder(p, &x.q).unwrap();
        let jac = model::jacobians(p, &q_l).unwrap();
        let pd = 400.0 * (anchor.q - x.q) + 80.0 * (anchor.dq - x.dq);
        ControlInput(jac.j_l.transpose() * (terms.bias(&x.dq) + terms.mass * pd))
    }

    #[test]
    fn initialization_is_quiet() {
        let p = params();
        let x = rest_state(&p);
        let observer = DisturbanceObserver::new(&p, &x, Vector4::repeat(20.0));
        assert_eq!(observer.estimate(), Vector4::zeros());
        assert_eq!(observer.initial_momentum, Vector4::zeros());
        // Nonzero rates: p(0) matches the product M qdot.
        let mut moving = x;
        moving.dq = Vector4::new(0.1, -0.2, 0.15, 0.05);
        let observer = DisturbanceObserver::new(&p, &moving, Vector4::repeat(20.0));
        let terms = model::joint_terms(&p, &moving);
        assert_relative_eq!(observer.initial_momentum, terms.mass * moving.dq, epsilon = 1e-12);
        assert_eq!(observer.estimate(), Vector4::zeros());
    }

    #[test]
    fn stationary_plant_does_not_drift() {
        let p = params();
        let x0 = rest_state(&p);
        let (_, estimates, _) = simulate(
            &p,
            x0,
            |_, x| gravity_hold(&p, x),
            |_| Vector4::zeros(),
            20.0,
            1e-3,
            10_000,
        );
        for e in estimates {
            assert!(e.norm() < 1e-9, "drift {}", e.norm());
        }
    }

    #[test]
    fn step_response_is_first_order() {
        let p = params();
        let gain = 20.0;
        let x0 = rest_state(&p);
        let step = Vector4::new(3000.0, 8000.0, -5000.0, 2000.0);
        let (times, estimates, _) = simulate(
            &p,
            x0,
            |_, x| station_keeping(&p, &x0, x),
            move |_| step,
            gain,
            1e-3,
            ((3.0 / gain) / 1e-3) as usize + 50,
        );
        // Error below 5% of the step after three time constants.
        let last = estimates.last().unwrap();
        let rel = (last - step).norm() / step.norm();
        assert!(rel < 0.05, "error {rel}");
        // 63.2% crossing sits at one time constant within 10%.
        let target = 0.632 * step[1];
        let crossing = times
            .iter()
            .zip(&estimates)
            .find(|(_, e)| e[1] >= target)
            .map(|(t, _)| *t)
            .unwrap();
        let tau = 1.0 / gain;
        assert!(
            (crossing - tau).abs() / tau < 0.10,
            "time constant {crossing} vs {tau}"
        );
    }

    #[test]
    fn sinusoid_gain_matches_low_pass_magnitude() {
        let p = params();
        let gain = 20.0;
        let x0 = rest_state(&p);
        for ratio in [0.1, 1.0, 10.0] {
            let omega = ratio * gain;
            let amplitude = 5000.0;
            let steps = ((8.0 * std::f64::consts::PI / f64::min(omega, gain)) / 1e-3) as usize;
            let (times, estimates, _) = simulate(
                &p,
                x0,
                |_, x| station_keeping(&p, &x0, x),
                move |t| Vector4::new(0.0, amplitude * (omega * t).sin(), 0.0, 0.0),
                gain,
                1e-3,
                steps,
            );
            // Least-squares fit of the steady tail onto sin/cos.
            let tail = steps / 2;
            let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (t, e) in times[tail..].iter().zip(&estimates[tail..]) {
                let (s, c) = ((omega * t).sin(), (omega * t).cos());
                ss += s * s;
                sc += s * c;
                cc += c * c;
                ys += e[1] * s;
                yc += e[1] * c;
            }
            let det = ss * cc - sc * sc;
            let a = (ys * cc - yc * sc) / det;
            let b = (yc * ss - ys * sc) / det;
            let measured = (a * a + b * b).sqrt() / amplitude;
            let expected = gain / (omega * omega + gain * gain).sqrt();
            let rel = (measured - expected).abs() / expected;
            assert!(rel < 0.05, "omega ratio {ratio}: gain {measured} vs {expected}");
        }
    }

    #[test]
    fn estimate_is_input_invariant() {
        let p = params();
        let x0 = rest_state(&p);
        let delta = Vector4::new(1000.0, -4000.0, 2500.0, 800.0);
        // The discrete trapezoid cancels the input only to integration
        // accuracy, so the invariance check runs at a fine step.
        let dt = 5e-6;
        let steps = 100_000;
        let (_, a, _) = simulate(
            &p,
            x0,
            |_, x| station_keeping(&p, &x0, x),
            move |_| delta,
            20.0,
            dt,
            steps,
        );
        let (_, b, _) = simulate(
            &p,
            x0,
            |t, x| {
                let mut u = station_keeping(&p, &x0, x).0;
                u[1] += 2.0e3 * (2.0 * t).sin();
                u[3] -= 1.0e3 * (1.5 * t).cos();
                ControlInput(u)
            },
            move |_| delta,
            20.0,
            dt,
            steps,
        );
        for (ea, eb) in a.iter().zip(&b) {
            assert!((ea - eb).norm() < 1e-8, "input leakage {}", (ea - eb).norm());
        }
    }

    #[test]
    fn halving_dt_converges_at_second_order() {
        let p = params();
        let x0 = rest_state(&p);
        let step = Vector4::new(0.0, 6000.0, 0.0, 0.0);
        let run = |dt: f64| {
            let steps = (0.2 / dt) as usize;
            let (_, estimates, _) = simulate(
                &p,
                x0,
                |_, x| station_keeping(&p, &x0, x),
                move |_| step,
                20.0,
                dt,
                steps,
            );
            estimates.last().unwrap()[1]
        };
        let coarse = run(2e-3);
        let mid = run(1e-3);
        let fine = run(5e-4);
        let ratio = (coarse - mid).abs() / (mid - fine).abs();
        // O(dt^2): halving shrinks the difference about fourfold.
        assert!((2.5..7.0).contains(&ratio), "order ratio {ratio}");
    }

    #[test]
    fn rebase_preserves_the_trace() {
        let p = params();
        let x0 = rest_state(&p);
        let delta = Vector4::new(500.0, 2000.0, -1000.0, 300.0);
        let mut observer = DisturbanceObserver::new(&p, &x0, Vector4::repeat(20.0));
        let mut x = x0;
        let u = gravity_hold(&p, &x0);
        let dt = 1e-3;
        for _ in 0..500 {
            let ddq = model::joint_acceleration(&p, &x, &u, &delta).unwrap();
            x = JointState::new(x.q + dt * x.dq, x.dq + dt * ddq);
            observer.update(&p, &x, &u, dt).unwrap();
        }
        let mut rebased = observer.rebased();
        for _ in 0..500 {
            let ddq = model::joint_acceleration(&p, &x, &u, &delta).unwrap();
            x = JointState::new(x.q + dt * x.dq, x.dq + dt * ddq);
            let a = observer.update(&p, &x, &u, dt).unwrap();
            let b = rebased.update(&p, &x, &u, dt).unwrap();
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn cylinder_frame_image() {
        let p = params();
        let mut rng = StdRng::seed_from_u64(57);
        for _ in 0..50 {
            let q_l = random_q_l(&p, &mut rng, 0.02);
            let delta = Vector4::new(
                rng.gen_range(-1e4..1e4),
                rng.gen_range(-1e4..1e4),
                rng.gen_range(-1e4..1e4),
                rng.gen_range(-1e4..1e4),
            );
            let image = to_cylinder_frame(&p, &delta, &q_l).unwrap();
            // Swing channel passes through the identity block.
            assert_relative_eq!(image[0], delta[0], epsilon = 1e-12);
            // Zero maps to zero.
            assert_eq!(
                to_cylinder_frame(&p, &Vector4::zeros(), &q_l).unwrap(),
                Vector4::zeros()
            );
            // Consistency with the dynamics-side image used by Eq-style
            // cylinder dynamics.
            let jac = model::jacobians(&p, &q_l).unwrap();
            assert_relative_eq!(image, jac.j_l.transpose() * delta, epsilon = 1e-12);
            // And applying it to a cylinder state reproduces the joint-side
            // acceleration (coordinate oracle).
            let x_theta = JointState::at_rest(model::cylinder_to_joint(&p, &q_l).unwrap());
            let u = ControlInput::zero();
            let ddq_theta = model::joint_acceleration(&p, &x_theta, &u, &delta).unwrap();
            let xl = CylinderState::at_rest(q_l);
            let ddq_l = model::cylinder_acceleration(&p, &xl, &u, &image).unwrap();
            let mapped = jac.j_l * ddq_l;
            assert_relative_eq!(mapped, ddq_theta, epsilon = 1e-9, max_relative = 1e-9);
        }
    }
}
