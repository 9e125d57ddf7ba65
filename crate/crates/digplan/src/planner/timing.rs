//! Time parameterization of the phase-2 via points.
//!
//! The cutting-phase program produces a geometric path; the receding-horizon
//! tracker needs time stamps. Each segment gets the duration that puts its
//! fastest cylinder at `utilization * limit`, leaving the rest of the margin
//! for the local planner.

use nalgebra::Vector4;

use crate::model::PhysicalLimits;

/// A time-stamped via point.
#[derive(Debug, Clone, Copy)]
pub struct TimedKnot {
    pub t: f64,
    pub q: Vector4<f64>,
}

/// Assign knot times so the highest-ratio channel of each segment moves at
/// `utilization` of its rate limit; zero-length segments are merged.
pub fn time_parameterize(
    via: &[Vector4<f64>],
    limits: &PhysicalLimits,
    utilization: f64,
) -> Vec<TimedKnot> {
    assert!(utilization > 0.0 && utilization <= 1.0);
    let mut knots = Vec::with_capacity(via.len());
    let mut t = 0.0;
    let rate_cap: Vec<f64> = (0..4)
        .map(|j| {
            limits.velocity_upper[j]
                .min(-limits.velocity_lower[j])
                .abs()
                * utilization
        })
        .collect();
    for (i, q) in via.iter().enumerate() {
        if i == 0 {
            knots.push(TimedKnot { t, q: *q });
            continue;
        }
        let step = q - via[i - 1];
        let duration = (0..4)
            .map(|j| step[j].abs() / rate_cap[j])
            .fold(0.0_f64, f64::max);
        if duration == 0.0 {
            continue; // merged
        }
        t += duration;
        knots.push(TimedKnot { t, q: *q });
    }
    knots
}

/// Linear interpolation of a knot sequence; rates are segment slopes and the
/// trajectory holds its endpoints outside the time span.
pub fn sample_knots(knots: &[TimedKnot], t: f64) -> (Vector4<f64>, Vector4<f64>) {
    if knots.is_empty() {
        return (Vector4::zeros(), Vector4::zeros());
    }
    if t <= knots[0].t {
        let rate = if knots.len() > 1 {
            segment_rate(&knots[0], &knots[1])
        } else {
            Vector4::zeros()
        };
        return (knots[0].q, if t < knots[0].t { Vector4::zeros() } else { rate });
    }
    for w in knots.windows(2) {
        if t <= w[1].t {
            let rate = segment_rate(&w[0], &w[1]);
            return (w[0].q + rate * (t - w[0].t), rate);
        }
    }
    (knots[knots.len() - 1].q, Vector4::zeros())
}

fn segment_rate(a: &TimedKnot, b: &TimedKnot) -> Vector4<f64> {
    (b.q - a.q) / (b.t - a.t)
}

/// Rate of the first segment (the phase entry velocity).
pub fn entry_rate(knots: &[TimedKnot]) -> Vector4<f64> {
    if knots.len() < 2 {
        Vector4::zeros()
    } else {
        segment_rate(&knots[0], &knots[1])
    }
}

/// Rate of the last segment (the phase exit velocity).
pub fn exit_rate(knots: &[TimedKnot]) -> Vector4<f64> {
    if knots.len() < 2 {
        Vector4::zeros()
    } else {
        segment_rate(&knots[knots.len() - 2], &knots[knots.len() - 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use approx::assert_relative_eq;

    #[test]
    fn single_channel_duration() {
        let mut p = ModelParams::default();
        p.limits.velocity_upper = [0.4, 0.2, 0.2, 0.2];
        p.limits.velocity_lower = [-0.4, -0.2, -0.2, -0.2];
        // One cylinder moves 0.1 m against a 0.2 m/s limit at 50%
        // utilization: expected duration 1.0 s.
        let via = [
            Vector4::new(0.0, 3.2, 2.0, 0.5),
            Vector4::new(0.0, 3.3, 2.0, 0.5),
        ];
        let knots = time_parameterize(&via, &p.limits, 0.5);
        assert_eq!(knots.len(), 2);
        assert_relative_eq!(knots[1].t, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_points_merge_to_zero_duration() {
        let p = ModelParams::default();
        let q = Vector4::new(0.0, 3.2, 2.0, 0.5);
        let knots = time_parameterize(&[q, q, q], &p.limits, 0.7);
        assert_eq!(knots.len(), 1);
        assert_eq!(knots[0].t, 0.0);
    }

    #[test]
    fn sampled_rates_respect_utilization() {
        let p = ModelParams::default();
        let eta = 0.7;
        let via: Vec<Vector4<f64>> = (0..12)
            .map(|i| {
                let s = i as f64 / 11.0;
                Vector4::new(
                    0.0,
                    3.1 + 1.2 * s,
                    2.0 + 1.1 * (3.0 * s).sin().abs(),
                    0.5 + 1.3 * s * s,
                )
            })
            .collect();
        let knots = time_parameterize(&via, &p.limits, eta);
        let total = knots.last().unwrap().t;
        for i in 0..2000 {
            let t = total * i as f64 / 1999.0;
            let (_, rate) = sample_knots(&knots, t);
            for j in 0..4 {
                let cap = eta
                    * p.limits.velocity_upper[j]
                        .min(-p.limits.velocity_lower[j])
                        .abs();
                assert!(rate[j].abs() <= cap + 1e-9, "channel {j} rate {}", rate[j]);
            }
        }
    }
}
