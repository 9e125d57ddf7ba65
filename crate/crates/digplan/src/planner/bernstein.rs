//! Bernstein-polynomial trajectories for the approach and carry phases.
//!
//! A curve of degree `n` over `s = t/T in [0, 1]` is pinned to boundary
//! configurations and rates through its first and last control points, stays
//! inside the configuration box because the curve lives in the convex hull
//! of its control points, and bounds its rates through the derivative
//! control points `n (b_{k+1} - b_k) / T`. The travel cost is the integral
//! of the weighted squared actuator force reconstructed by inverse dynamics
//! along the curve.

use nalgebra::Vector4;

use crate::error::PlanError;
use crate::model::{self, CylinderState, ModelParams};
use crate::solver::{self, NlpProblem, SolveOptions, SolveResult};

/// A fixed-duration Bernstein curve in cylinder coordinates.
#[derive(Debug, Clone)]
pub struct BernsteinCurve {
    pub control_points: Vec<Vector4<f64>>,
    pub duration: f64,
}

impl BernsteinCurve {
    pub fn degree(&self) -> usize {
        self.control_points.len() - 1
    }

    /// De Casteljau evaluation at normalized parameter `s`.
    fn casteljau(points: &[Vector4<f64>], s: f64) -> Vector4<f64> {
        let mut work: Vec<Vector4<f64>> = points.to_vec();
        for level in (1..points.len()).rev() {
            for i in 0..level {
                work[i] = (1.0 - s) * work[i] + s * work[i + 1];
            }
        }
        work[0]
    }

    pub fn position(&self, t: f64) -> Vector4<f64> {
        let s = (t / self.duration).clamp(0.0, 1.0);
        Self::casteljau(&self.control_points, s)
    }

    /// Control points of the rate curve, `n (b_{k+1} - b_k) / T`.
    pub fn velocity_control_points(&self) -> Vec<Vector4<f64>> {
        let n = self.degree() as f64;
        self.control_points
            .windows(2)
            .map(|w| n * (w[1] - w[0]) / self.duration)
            .collect()
    }

    pub fn velocity(&self, t: f64) -> Vector4<f64> {
        let s = (t / self.duration).clamp(0.0, 1.0);
        Self::casteljau(&self.velocity_control_points(), s)
    }

    pub fn acceleration(&self, t: f64) -> Vector4<f64> {
        let s = (t / self.duration).clamp(0.0, 1.0);
        let v = self.velocity_control_points();
        let m = (v.len() - 1) as f64;
        let a: Vec<Vector4<f64>> = v.windows(2).map(|w| m * (w[1] - w[0]) / self.duration).collect();
        Self::casteljau(&a, s)
    }
}

/// Boundary conditions of one travel phase.
#[derive(Debug, Clone, Copy)]
pub struct PhaseBoundary {
    pub start: CylinderState,
    pub end: CylinderState,
}

/// Which travel phase is being planned; the carry phase adds the no-spill
/// rotation band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TravelPhase {
    Approach,
    /// Carry with the bucket rotation held in `[theta_floor, pi]`.
    Carry { theta_floor: f64 },
}

/// Configuration of the phase-1/3 boundary-value optimizer.
#[derive(Debug, Clone)]
pub struct Phase13Config {
    /// Curve degree (control point count minus one).
    pub degree: usize,
    /// Diagonal of the force-cost metric `W_u`.
    pub force_weight: [f64; 4],
    pub quadrature_nodes: usize,
    pub duration_min_s: f64,
    pub duration_max_s: f64,
    /// Swing-angle box, which the machine limits do not carry.
    pub swing_bounds_rad: [f64; 2],
    pub solve: SolveOptions,
}

impl Default for Phase13Config {
    fn default() -> Self {
        Phase13Config {
            degree: 8,
            force_weight: [1e-10, 1e-12, 1e-12, 1e-12],
            quadrature_nodes: 51,
            duration_min_s: 1.0,
            duration_max_s: 15.0,
            swing_bounds_rad: [-3.0, 3.0],
            solve: SolveOptions::default(),
        }
    }
}

/// Result of a phase-1/3 solve.
#[derive(Debug, Clone)]
pub struct Phase13Plan {
    pub curve: BernsteinCurve,
    pub force_cost: f64,
    pub solve: SolveResult,
}

struct Phase13Nlp<'a> {
    params: &'a ModelParams,
    cfg: &'a Phase13Config,
    boundary: PhaseBoundary,
    phase: TravelPhase,
    /// Index layout: free control points `b_2 .. b_{n-2}` then `T`.
    free_points: usize,
}

impl Phase13Nlp<'_> {
    fn assemble(&self, z: &[f64]) -> BernsteinCurve {
        let n = self.cfg.degree;
        let duration = z[self.free_points * 4].max(1e-3);
        let mut pts = vec![Vector4::zeros(); n + 1];
        pts[0] = self.boundary.start.q;
        pts[n] = self.boundary.end.q;
        pts[1] = pts[0] + (duration / n as f64) * self.boundary.start.dq;
        pts[n - 1] = pts[n] - (duration / n as f64) * self.boundary.end.dq;
        for i in 0..self.free_points {
            pts[i + 2] = Vector4::new(z[4 * i], z[4 * i + 1], z[4 * i + 2], z[4 * i + 3]);
        }
        BernsteinCurve {
            control_points: pts,
            duration,
        }
    }

    fn box_bounds(&self) -> (Vector4<f64>, Vector4<f64>) {
        let lim = &self.params.limits;
        let lo = Vector4::new(
            self.cfg.swing_bounds_rad[0],
            lim.cylinder_lower_m[0],
            lim.cylinder_lower_m[1],
            lim.cylinder_lower_m[2],
        );
        let hi = Vector4::new(
            self.cfg.swing_bounds_rad[1],
            lim.cylinder_upper_m[0],
            lim.cylinder_upper_m[1],
            lim.cylinder_upper_m[2],
        );
        (lo, hi)
    }

    /// Bucket carrier rotation at a control point, evaluated with the point
    /// clamped just inside the admissible box so the closed-chain map stays
    /// defined while the box rows pull stray iterates back.
    fn rotation_at(&self, point: &Vector4<f64>) -> f64 {
        let (lo, hi) = self.box_bounds();
        let mut clamped = *point;
        for i in 1..4 {
            clamped[i] = clamped[i].clamp(lo[i], hi[i]);
        }
        match model::cylinder_to_joint(self.params, &clamped) {
            Ok(q) => q[1] + q[2] + q[3],
            Err(_) => std::f64::consts::PI, // outside: maximally penalized
        }
    }
}

impl NlpProblem for Phase13Nlp<'_> {
    fn dim(&self) -> usize {
        self.free_points * 4 + 1
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let curve = self.assemble(z);
        let (lo, hi) = self.box_bounds();
        let nodes = self.cfg.quadrature_nodes | 1; // Simpson needs an odd count
        let h = curve.duration / (nodes - 1) as f64;
        let mut total = 0.0;
        for i in 0..nodes {
            let t = h * i as f64;
            let mut q = curve.position(t);
            for j in 1..4 {
                q[j] = q[j].clamp(lo[j], hi[j]);
            }
            let dq = curve.velocity(t);
            let ddq = curve.acceleration(t);
            let state = CylinderState::new(q, dq);
            let u = match model::cylinder_inverse_dynamics(self.params, &state, &ddq) {
                Ok(u) => u.0,
                Err(_) => return 1e12,
            };
            let integrand: f64 = (0..4)
                .map(|j| 0.5 * self.cfg.force_weight[j] * u[j] * u[j])
                .sum();
            let weight = if i == 0 || i == nodes - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            total += weight * integrand;
        }
        total * h / 3.0
    }

    fn inequality_count(&self) -> usize {
        let n = self.cfg.degree;
        let mut count = (n + 1) * 8; // position box
        count += n * 8; // rate hull
        count += 2; // duration window
        if matches!(self.phase, TravelPhase::Carry { .. }) {
            count += (n + 1) * 2;
        }
        count
    }

    fn inequalities(&self, z: &[f64], out: &mut [f64]) {
        let curve = self.assemble(z);
        let (lo, hi) = self.box_bounds();
        let lim = &self.params.limits;
        let n = self.cfg.degree;
        let mut k = 0;
        for p in &curve.control_points {
            for j in 0..4 {
                out[k] = p[j] - lo[j];
                out[k + 1] = hi[j] - p[j];
                k += 2;
            }
        }
        for w in curve.control_points.windows(2) {
            let rate = (n as f64) * (w[1] - w[0]) / curve.duration;
            for j in 0..4 {
                out[k] = rate[j] - lim.velocity_lower[j];
                out[k + 1] = lim.velocity_upper[j] - rate[j];
                k += 2;
            }
        }
        out[k] = curve.duration - self.cfg.duration_min_s;
        out[k + 1] = self.cfg.duration_max_s - curve.duration;
        k += 2;
        if let TravelPhase::Carry { theta_floor } = self.phase {
            for p in &curve.control_points {
                let theta = self.rotation_at(p);
                out[k] = theta - theta_floor;
                out[k + 1] = std::f64::consts::PI - theta;
                k += 2;
            }
        }
        debug_assert_eq!(k, self.inequality_count());
    }
}

/// Solve the boundary-value problem of a travel phase.
pub fn plan_phase13(
    params: &ModelParams,
    cfg: &Phase13Config,
    boundary: PhaseBoundary,
    phase: TravelPhase,
) -> Result<Phase13Plan, PlanError> {
    let n = cfg.degree;
    assert!(n >= 4, "need at least 5 control points to pin both boundaries");
    // A no-op move plans to a no-op: constant curve at the duration floor.
    if (boundary.end.q - boundary.start.q).norm() < 1e-12
        && boundary.start.dq.norm() < 1e-12
        && boundary.end.dq.norm() < 1e-12
    {
        let curve = BernsteinCurve {
            control_points: vec![boundary.start.q; n + 1],
            duration: cfg.duration_min_s,
        };
        let state = CylinderState::at_rest(boundary.start.q);
        let hold = model::cylinder_inverse_dynamics(params, &state, &nalgebra::Vector4::zeros())?;
        let force_cost: f64 = (0..4)
            .map(|j| 0.5 * cfg.force_weight[j] * hold.0[j] * hold.0[j])
            .sum::<f64>()
            * cfg.duration_min_s;
        return Ok(Phase13Plan {
            curve,
            force_cost,
            solve: crate::solver::SolveResult {
                x: Vec::new(),
                objective: force_cost,
                max_violation: 0.0,
                best_feasible: None,
                kkt_residual: 0.0,
                outer_iterations: 0,
                inner_iterations: 0,
                stop: crate::solver::StopReason::Converged,
            },
        });
    }
    let nlp = Phase13Nlp {
        params,
        cfg,
        boundary,
        phase,
        free_points: n - 3,
    };
    // Boundary states must respect the configuration box.
    let (lo, hi) = nlp.box_bounds();
    for (name, state) in [("start", &boundary.start), ("end", &boundary.end)] {
        for j in 0..4 {
            if state.q[j] < lo[j] - 1e-9 || state.q[j] > hi[j] + 1e-9 {
                return Err(PlanError::InfeasibleBoundary {
                    what: format!("{name} q[{j}] = {} outside box", state.q[j]),
                });
            }
        }
    }
    // Seed: straight line between the boundary configurations; duration from
    // the slowest channel at half its rate limit.
    let lim = &params.limits;
    let mut duration = cfg.duration_min_s;
    for j in 0..4 {
        let span = (boundary.end.q[j] - boundary.start.q[j]).abs();
        let rate = 0.5 * lim.velocity_upper[j].min(-lim.velocity_lower[j]).abs();
        if rate > 0.0 {
            duration = duration.max(span / rate);
        }
    }
    duration = duration.min(cfg.duration_max_s);
    let mut seed = Vec::with_capacity(nlp.dim());
    for i in 0..nlp.free_points {
        let s = (i + 2) as f64 / n as f64;
        let p = boundary.start.q + s * (boundary.end.q - boundary.start.q);
        seed.extend_from_slice(&[p[0], p[1], p[2], p[3]]);
    }
    seed.push(duration);

    let solve = solver::solve(&nlp, &seed, &cfg.solve);
    let curve = nlp.assemble(&solve.x);
    let force_cost = nlp.objective(&solve.x);
    Ok(Phase13Plan {
        curve,
        force_cost,
        solve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> ModelParams {
        ModelParams::default()
    }

    fn rest(q: Vector4<f64>) -> CylinderState {
        CylinderState::at_rest(q)
    }

    #[test]
    fn curve_interpolates_endpoints() {
        let pts = vec![
            Vector4::new(0.0, 2.2, 2.0, 0.5),
            Vector4::new(0.1, 2.3, 2.1, 0.6),
            Vector4::new(0.2, 2.4, 2.2, 0.7),
        ];
        let curve = BernsteinCurve {
            control_points: pts.clone(),
            duration: 2.0,
        };
        assert_relative_eq!(curve.position(0.0), pts[0], epsilon = 1e-15);
        assert_relative_eq!(curve.position(2.0), pts[2], epsilon = 1e-15);
    }

    #[test]
    fn constant_curve_has_zero_rate_control_points() {
        let p = Vector4::new(0.0, 2.2, 2.0, 0.5);
        let curve = BernsteinCurve {
            control_points: vec![p; 9],
            duration: 3.0,
        };
        for v in curve.velocity_control_points() {
            assert_eq!(v, Vector4::zeros());
        }
    }

    #[test]
    fn sampled_curve_stays_in_control_point_hull() {
        let pts: Vec<Vector4<f64>> = (0..9)
            .map(|i| {
                let s = i as f64 / 8.0;
                Vector4::new(
                    -0.5 + s,
                    1.9 + 0.9 * (6.28 * s).sin().abs(),
                    2.0 + 0.5 * s,
                    0.5 + 1.2 * s * s,
                )
            })
            .collect();
        let curve = BernsteinCurve {
            control_points: pts.clone(),
            duration: 5.0,
        };
        let mut lo = pts[0];
        let mut hi = pts[0];
        for p in &pts {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        for i in 0..10_000 {
            let t = 5.0 * i as f64 / 9_999.0;
            let q = curve.position(t);
            for j in 0..4 {
                assert!(q[j] >= lo[j] - 1e-12 && q[j] <= hi[j] + 1e-12);
            }
        }
    }

    #[test]
    fn velocity_matches_finite_difference_of_position() {
        let pts: Vec<Vector4<f64>> = (0..9)
            .map(|i| {
                let s = i as f64 / 8.0;
                Vector4::new(s, 2.1 + 0.4 * s, 2.0 + 0.9 * s * (1.0 - s), 0.5)
            })
            .collect();
        let curve = BernsteinCurve {
            control_points: pts,
            duration: 4.0,
        };
        for i in 1..20 {
            let t = 4.0 * i as f64 / 20.0;
            let h = 1e-6;
            let fd = (curve.position(t + h) - curve.position(t - h)) / (2.0 * h);
            assert_relative_eq!(curve.velocity(t), fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn degenerate_boundary_returns_duration_floor() {
        let p = params();
        let cfg = Phase13Config::default();
        let q = Vector4::new(0.0, 2.6, 2.2, 1.0);
        let plan = plan_phase13(
            &p,
            &cfg,
            PhaseBoundary {
                start: rest(q),
                end: rest(q),
            },
            TravelPhase::Approach,
        )
        .unwrap();
        assert_relative_eq!(plan.curve.duration, cfg.duration_min_s, epsilon = 1e-4);
        for cp in &plan.curve.control_points {
            assert_relative_eq!(*cp, q, epsilon = 1e-5);
        }
    }

    #[test]
    fn boundary_outside_box_is_rejected() {
        let p = params();
        let cfg = Phase13Config::default();
        let q_bad = Vector4::new(0.0, 1.0, 2.2, 1.0); // boom below its box
        let err = plan_phase13(
            &p,
            &cfg,
            PhaseBoundary {
                start: rest(q_bad),
                end: rest(Vector4::new(0.0, 2.6, 2.2, 1.0)),
            },
            TravelPhase::Approach,
        )
        .unwrap_err();
        assert!(matches!(err, PlanError::InfeasibleBoundary { .. }));
    }

    #[test]
    fn planned_travel_respects_boxes_and_boundaries() {
        let p = params();
        let cfg = Phase13Config::default();
        let start = rest(Vector4::new(-0.5, 2.4, 2.0, 0.8));
        let end = CylinderState::new(
            Vector4::new(0.0, 2.9, 2.6, 1.4),
            Vector4::new(0.0, 0.02, -0.03, 0.04),
        );
        let plan = plan_phase13(&p, &cfg, PhaseBoundary { start, end }, TravelPhase::Approach).unwrap();
        let curve = &plan.curve;
        assert_relative_eq!(curve.position(0.0), start.q, epsilon = 1e-9);
        assert_relative_eq!(curve.position(curve.duration), end.q, epsilon = 1e-9);
        assert_relative_eq!(curve.velocity(0.0), start.dq, epsilon = 1e-9);
        assert_relative_eq!(curve.velocity(curve.duration), end.dq, epsilon = 1e-9);
        let lim = &p.limits;
        for i in 0..=1000 {
            let t = curve.duration * i as f64 / 1000.0;
            let q = curve.position(t);
            let dq = curve.velocity(t);
            for j in 0..3 {
                assert!(q[j + 1] >= lim.cylinder_lower_m[j] - 1e-7);
                assert!(q[j + 1] <= lim.cylinder_upper_m[j] + 1e-7);
            }
            for j in 0..4 {
                assert!(dq[j] >= lim.velocity_lower[j] - 1e-6);
                assert!(dq[j] <= lim.velocity_upper[j] + 1e-6);
            }
        }
    }
}
