//! Phase stitching into a sampled global reference trajectory.

use nalgebra::Vector4;

use crate::error::PlanError;
use crate::planner::bernstein::BernsteinCurve;
use crate::planner::timing::{self, TimedKnot};

/// Junction mismatch above which stitching is rejected.
pub const JUNCTION_TOL: f64 = 1e-9;

/// One sample of the global reference.
#[derive(Debug, Clone, Copy)]
pub struct GlobalSample {
    pub t: f64,
    pub q: Vector4<f64>,
    pub dq: Vector4<f64>,
    pub phase: u8,
}

/// Phase-tagged, time-stamped reference trajectory.
#[derive(Debug, Clone)]
pub struct GlobalTrajectory {
    pub samples: Vec<GlobalSample>,
    /// Phase end times `[t1, t2, t3]`.
    pub boundaries: [f64; 3],
    pub step: f64,
    approach: BernsteinCurve,
    cut: Vec<TimedKnot>,
    carry: BernsteinCurve,
}

impl GlobalTrajectory {
    pub fn duration(&self) -> f64 {
        self.boundaries[2]
    }

    /// Evaluate the underlying phase curves at an arbitrary time, clamped to
    /// the trajectory span.
    pub fn eval(&self, t: f64) -> GlobalSample {
        let t = t.clamp(0.0, self.boundaries[2]);
        if t <= self.boundaries[0] {
            GlobalSample {
                t,
                q: self.approach.position(t),
                dq: self.approach.velocity(t),
                phase: 1,
            }
        } else if t <= self.boundaries[1] {
            let local = t - self.boundaries[0];
            let (q, dq) = timing::sample_knots(&self.cut, local);
            GlobalSample { t, q, dq, phase: 2 }
        } else {
            let local = t - self.boundaries[1];
            GlobalSample {
                t,
                q: self.carry.position(local),
                dq: self.carry.velocity(local),
                phase: 3,
            }
        }
    }
}

/// Stitch the three phases and sample at the local-planner step, verifying
/// configuration and rate continuity at both junctions.
pub fn assemble_global(
    approach: BernsteinCurve,
    cut: Vec<TimedKnot>,
    carry: BernsteinCurve,
    step: f64,
) -> Result<GlobalTrajectory, PlanError> {
    assert!(step > 0.0);
    assert!(cut.len() >= 2, "cutting phase must have at least one segment");
    let check = |junction: &'static str,
                 qa: Vector4<f64>,
                 dqa: Vector4<f64>,
                 qb: Vector4<f64>,
                 dqb: Vector4<f64>|
     -> Result<(), PlanError> {
        for c in 0..4 {
            let dq_res = (dqa[c] - dqb[c]).abs();
            let q_res = (qa[c] - qb[c]).abs();
            if q_res > JUNCTION_TOL || dq_res > JUNCTION_TOL {
                return Err(PlanError::Discontinuity {
                    junction,
                    component: c,
                    residual: q_res.max(dq_res),
                });
            }
        }
        Ok(())
    };
    check(
        "approach-cut",
        approach.position(approach.duration),
        approach.velocity(approach.duration),
        cut[0].q,
        timing::entry_rate(&cut),
    )?;
    let cut_duration = cut.last().unwrap().t;
    let (cut_end_q, _) = timing::sample_knots(&cut, cut_duration);
    check(
        "cut-carry",
        cut_end_q,
        timing::exit_rate(&cut),
        carry.position(0.0),
        carry.velocity(0.0),
    )?;

    let t1 = approach.duration;
    let t2 = t1 + cut_duration;
    let t3 = t2 + carry.duration;
    let mut trajectory = GlobalTrajectory {
        samples: Vec::new(),
        boundaries: [t1, t2, t3],
        step,
        approach,
        cut,
        carry,
    };
    let count = (t3 / step).ceil() as usize + 1;
    trajectory.samples = (0..count)
        .map(|k| trajectory.eval(k as f64 * step))
        .collect();
    Ok(trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line_curve(from: Vector4<f64>, to: Vector4<f64>, duration: f64) -> BernsteinCurve {
        // Degree-1 curve: constant velocity.
        BernsteinCurve {
            control_points: vec![from, to],
            duration,
        }
    }

    fn fixture() -> GlobalTrajectory {
        let a = Vector4::new(0.0, 3.2, 2.2, 0.8);
        let b = Vector4::new(0.0, 3.4, 2.4, 1.0);
        let c = Vector4::new(0.0, 3.5, 2.5, 1.1);
        let d = Vector4::new(0.2, 3.6, 2.6, 1.2);
        // Matching rates across junctions: cut segments at the approach's
        // terminal rate.
        let cut_rate = (b - a) / 2.0;
        let seg = 0.5 * (c - b).norm() / cut_rate.norm();
        let cut = vec![
            TimedKnot { t: 0.0, q: b },
            TimedKnot {
                t: (c - b).norm() / cut_rate.norm(),
                q: c,
            },
        ];
        let _ = seg;
        let carry_rate = (c - b) / cut[1].t;
        let carry_duration = 3.0;
        let carry = BernsteinCurve {
            control_points: vec![c, c + carry_rate * carry_duration],
            duration: carry_duration,
        };
        let _ = d;
        assemble_global(line_curve(a, b, 2.0), cut, carry, 0.02).unwrap()
    }

    #[test]
    fn junction_residuals_are_tiny() {
        let g = fixture();
        for t in [g.boundaries[0], g.boundaries[1]] {
            let before = g.eval(t - 1e-12);
            let after = g.eval(t + 1e-12);
            assert!((before.q - after.q).norm() < 1e-9);
            assert!((before.dq - after.dq).norm() < 1e-8);
        }
    }

    #[test]
    fn sample_count_matches_contract() {
        let g = fixture();
        let expected = (g.duration() / 0.02).ceil() as usize + 1;
        assert_eq!(g.samples.len(), expected);
    }

    #[test]
    fn half_step_resampling_reproduces_samples() {
        let g = fixture();
        for (k, s) in g.samples.iter().enumerate() {
            let half = g.eval(k as f64 * 0.02);
            assert_relative_eq!(s.q, half.q, epsilon = 1e-12);
            assert_relative_eq!(s.dq, half.dq, epsilon = 1e-12);
        }
        // A half-step trajectory evaluated on the full-step grid agrees.
        for k in 0..g.samples.len() {
            let t = k as f64 * 0.02;
            let a = g.eval(t);
            let b = g.eval((2 * k) as f64 * 0.01);
            assert_relative_eq!(a.q, b.q, epsilon = 1e-12);
        }
    }

    #[test]
    fn mismatched_junction_is_rejected() {
        let a = Vector4::new(0.0, 3.2, 2.2, 0.8);
        let b = Vector4::new(0.0, 3.4, 2.4, 1.0);
        let cut = vec![
            TimedKnot { t: 0.0, q: b + Vector4::new(1e-6, 0.0, 0.0, 0.0) },
            TimedKnot { t: 1.0, q: b + Vector4::new(0.1, 0.0, 0.0, 0.0) },
        ];
        let carry = line_curve(cut[1].q, cut[1].q + Vector4::new(0.3, 0.0, 0.0, 0.0), 3.0);
        let err = assemble_global(line_curve(a, b, 2.0), cut, carry, 0.02).unwrap_err();
        assert!(matches!(err, PlanError::Discontinuity { .. }), "{err:?}");
    }
}
