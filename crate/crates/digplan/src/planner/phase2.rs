//! Via-point program for the soil-cutting phase.
//!
//! Decision variables are the cylinder sub-configurations of `n2 + 1`
//! waypoints plus one slack bounded by both the swept volume and the bucket
//! capacity; maximizing the slack maximizes the realizable haul
//! `min(V_swept, V_cap)` while the travel term penalizes cylinder motion.
//! Waypoint x-coordinates are pinned to a uniform grid between the free
//! endpoints so the trapezoidal volume formula stays exact, and the
//! endpoints themselves are tied to the earth surface.

use nalgebra::{Vector3, Vector4};

use crate::error::PlanError;
use crate::model::{self, ModelParams, TipPose};
use crate::solver::{self, NlpProblem, SolveOptions, StopReason};
use crate::terrain::{
    self, BucketShell, CapacityCurve, ExcavatedVolume, GroundModel, TipPath, TipWaypoint,
};

/// Tolerance at which a returned dig plan must pass every cut constraint.
pub const PHASE2_TOL: f64 = 1e-6;

/// The cutting-phase program.
#[derive(Debug, Clone)]
pub struct Phase2Problem {
    pub ground: GroundModel,
    /// Travel weight `w_d`.
    pub travel_weight: f64,
    /// Volume weight `w_v`.
    pub volume_weight: f64,
    /// Travel metric `W` (diagonal, SPD).
    pub travel_metric: Vector3<f64>,
    /// Segment count `n2` (waypoint count minus one).
    pub segment_count: usize,
    pub capacity: CapacityCurve,
    pub shell: BucketShell,
    /// Seed entry/exit tip x-positions; the dig runs toward the cabin.
    pub entry_x: f64,
    pub exit_x: f64,
    /// Clearance angle of the seed path (rad).
    pub seed_clearance: f64,
    /// Smallest admissible clearance angle inside the program (rad).
    pub min_clearance: f64,
    pub solve: SolveOptions,
}

/// A solved dig plan.
#[derive(Debug, Clone)]
pub struct Phase2Plan {
    /// Via points `[L_B, L_A, L_K]`, entry first.
    pub via_points: Vec<Vector3<f64>>,
    pub tip_path: TipPath,
    pub volume: ExcavatedVolume,
    pub cost: f64,
    pub seed_cost: f64,
    pub report: terrain::FeasibilityReport,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
}

struct Phase2Nlp<'a> {
    params: &'a ModelParams,
    p: &'a Phase2Problem,
    points: usize,
    /// Gaussian half-width of the smooth path surrogate (m).
    soft_sigma: f64,
}

/// Conservative gap between the in-program shell rows and the exact
/// polyline check; covers the surrogate's deviation on curved scoops.
const SHELL_MARGIN: f64 = 0.02;

/// Interior shrink of the cylinder box inside the program.
const BOX_MARGIN: f64 = 5e-5;

impl Phase2Nlp<'_> {
    fn lengths(&self, z: &[f64], i: usize) -> Vector3<f64> {
        Vector3::new(z[3 * i], z[3 * i + 1], z[3 * i + 2])
    }

    /// Tip poses of every waypoint, with lengths clamped just inside the
    /// cylinder box so the closed-chain map stays defined off the feasible
    /// set; the box rows pull stray iterates back.
    fn tips(&self, z: &[f64]) -> Vec<TipWaypoint> {
        let lim = &self.params.limits;
        (0..self.points)
            .map(|i| {
                let l = self.lengths(z, i);
                let mut q = Vector4::new(0.0, l[0], l[1], l[2]);
                for j in 0..3 {
                    q[j + 1] = q[j + 1].clamp(lim.cylinder_lower_m[j], lim.cylinder_upper_m[j]);
                }
                let pose = model::tip_pose(self.params, &q).expect("box interior is admissible");
                TipWaypoint {
                    x: pose.x,
                    z: pose.z,
                    theta: pose.theta,
                }
            })
            .collect()
    }

    fn travel_cost(&self, z: &[f64]) -> f64 {
        let mut cost = 0.0;
        for i in 1..self.points {
            let step = self.lengths(z, i) - self.lengths(z, i - 1);
            cost += step.component_mul(&self.p.travel_metric).dot(&step);
        }
        self.p.travel_weight * cost
    }

    fn swept(&self, tips: &[TipWaypoint]) -> f64 {
        let n2 = self.points - 1;
        let (x0, xn) = (tips[0].x, tips[n2].x);
        let mut weighted = tips[0].z + tips[n2].z;
        for w in &tips[1..n2] {
            weighted += 2.0 * w.z;
        }
        self.p.ground.surface_integral(xn, x0) - weighted / (2.0 * n2 as f64) * (x0 - xn)
    }

    /// Smooth stand-in for the path polyline: a Gaussian-weighted blend of
    /// waypoint heights and the uncut surface (which dominates outside the
    /// swept x-range).
    fn soft_path_height(&self, tips: &[TipWaypoint], vx: f64) -> f64 {
        let inv2s2 = 1.0 / (2.0 * self.soft_sigma * self.soft_sigma);
        let mut weight_sum = 0.0;
        let mut blended = 0.0;
        for w in tips {
            let d = vx - w.x;
            let wgt = (-d * d * inv2s2).exp();
            weight_sum += wgt;
            blended += wgt * w.z;
        }
        // Anchor the surrogate to the surface away from the waypoints; the
        // anchor weight equals a waypoint one segment-width away.
        let anchor = (-(self.soft_sigma * 2.0).powi(2) * inv2s2).exp();
        weight_sum += anchor;
        blended += anchor * self.p.ground.surface(vx);
        blended / weight_sum
    }

    fn capacity(&self, theta_end: f64) -> f64 {
        let c = &self.p.capacity;
        if theta_end <= c.theta_empty {
            0.0
        } else if theta_end >= c.theta_full {
            c.v_max
        } else {
            let s = (theta_end - c.theta_empty) / (c.theta_full - c.theta_empty);
            c.v_max * s * s * (3.0 - 2.0 * s)
        }
    }
}

impl NlpProblem for Phase2Nlp<'_> {
    fn dim(&self) -> usize {
        3 * self.points + 1
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let slack = z[3 * self.points];
        self.travel_cost(z) - self.p.volume_weight * slack
    }

    fn inequality_count(&self) -> usize {
        let n = self.points;
        let n2 = n - 1;
        13 * n + 3 * n2 + 5
    }

    fn inequalities(&self, z: &[f64], out: &mut [f64]) {
        let tips = self.tips(z);
        let lim = &self.params.limits;
        let g = &self.p.ground;
        let n2 = self.points - 1;
        let mut k = 0;
        for i in 0..self.points {
            let l = self.lengths(z, i);
            let w = &tips[i];
            // cylinder box, shrunk so multiplier chatter cannot push the
            // polished plan outside the true box
            for j in 0..3 {
                out[k] = l[j] - lim.cylinder_lower_m[j] - BOX_MARGIN;
                out[k + 1] = lim.cylinder_upper_m[j] - BOX_MARGIN - l[j];
                k += 2;
            }
            // region of interest
            out[k] = w.x - g.x_min_m;
            out[k + 1] = g.x_max_m - w.x;
            k += 2;
            // between target and surface, with a sliver of margin that
            // vanishes on degenerate grounds and at the surface-pinned
            // endpoints
            let gap = g.surface(w.x) - g.target(w.x);
            let band_margin = if i == 0 || i == n2 {
                0.0
            } else {
                (0.25 * gap).min(1e-5).max(0.0)
            };
            out[k] = w.z - g.target(w.x) - band_margin;
            out[k + 1] = g.surface(w.x) - w.z - band_margin;
            k += 2;
            // bucket shell above the cut (heel and upper vertex), against a
            // smooth path surrogate with a conservative margin so the row
            // stays differentiable for disordered iterates
            let [_, heel, pin] = self.p.shell.vertices(w);
            for (vx, vz) in [heel, pin] {
                out[k] = vz - self.soft_path_height(&tips, vx) - SHELL_MARGIN;
                k += 1;
            }
            // wrist spill margin
            out[k] = std::f64::consts::PI - 1e-3 - w.theta;
            k += 1;
        }
        // Clearance angles work on the unwrapped velocity-angle profile and
        // keep the raw angle inside (0, pi); that is a smooth, conservative
        // restatement of the wrapped positive-clearance constraint, free of
        // the 2-pi jump the raw wrap would expose to the line search.
        let mut phi_prev = 0.0;
        for i in 1..=n2 {
            // monotone rotation
            out[k] = tips[i].theta - tips[i - 1].theta;
            k += 1;
            let (dx, dz) = (tips[i].x - tips[i - 1].x, tips[i].z - tips[i - 1].z);
            let mut phi = dz.atan2(dx);
            if i == 1 {
                if phi > std::f64::consts::FRAC_PI_2 {
                    phi -= 2.0 * std::f64::consts::PI;
                }
            } else {
                phi = phi_prev + wrap(phi - phi_prev);
            }
            phi_prev = phi;
            let alpha_raw = tips[i].theta - self.p.shell.plate_offset - phi;
            // Down-weight rows on collapsing segments where atan2 degrades.
            let d2 = dx * dx + dz * dz;
            let weight = d2 / (d2 + 1e-6);
            out[k] = (alpha_raw - self.p.min_clearance) * weight;
            out[k + 1] = (std::f64::consts::PI - 0.05 - alpha_raw) * weight;
            k += 2;
        }
        // dig toward the cabin with a minimum span
        out[k] = tips[0].x - tips[n2].x - 0.5;
        k += 1;
        // haul slack below both volume bounds and inside a fixed window
        let slack = z[3 * self.points];
        out[k] = self.swept(&tips) - slack;
        out[k + 1] = self.capacity(tips[n2].theta) - slack;
        out[k + 2] = slack;
        out[k + 3] = self.p.capacity.v_max - slack;
        k += 4;
        debug_assert_eq!(k, self.inequality_count());
    }

    fn equality_count(&self) -> usize {
        self.points + 1
    }

    fn equalities(&self, z: &[f64], out: &mut [f64]) {
        let tips = self.tips(z);
        let g = &self.p.ground;
        let n2 = self.points - 1;
        out[0] = tips[0].z - g.surface(tips[0].x);
        out[1] = tips[n2].z - g.surface(tips[n2].x);
        for i in 1..n2 {
            let grid = tips[0].x + (tips[n2].x - tips[0].x) * i as f64 / n2 as f64;
            out[1 + i] = tips[i].x - grid;
        }
    }
}

fn wrap(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w > std::f64::consts::PI {
        w -= two_pi;
    } else if w <= -std::f64::consts::PI {
        w += two_pi;
    }
    w
}

/// Circular-arc seed path: entry and exit on the surface, maximum sag at the
/// midpoint, rotation ramping linearly within the clearance budget.
fn build_seed(
    params: &ModelParams,
    p: &Phase2Problem,
    swing: f64,
) -> Result<(Vec<Vector3<f64>>, Vec<TipWaypoint>), PlanError> {
    let n2 = p.segment_count;
    let g = &p.ground;
    let (xe, xx) = (p.entry_x, p.exit_x);
    if xx >= xe {
        return Err(PlanError::InfeasibleSeed {
            report: format!("exit_x {xx} must be below entry_x {xe}"),
        });
    }
    let xs: Vec<f64> = (0..=n2)
        .map(|i| xe + (xx - xe) * i as f64 / n2 as f64)
        .collect();
    // Sag: the shallower of half the bucket length and the worst
    // surface-to-target gap along the grid, slightly relaxed.
    let gap = xs
        .iter()
        .map(|x| g.surface(*x) - g.target(*x))
        .fold(f64::INFINITY, f64::min);
    let depth = 0.98 * (0.5 * params.bucket.length_m).min(gap);
    let (ze, zx) = (g.surface(xe), g.surface(xx));
    let zs: Vec<f64> = if depth < 1e-6 {
        xs.iter().map(|x| g.surface(*x)).collect()
    } else {
        // Circle through the two surface points and the sagged midpoint.
        let xm = 0.5 * (xe + xx);
        let zm = 0.5 * (ze + zx) - depth;
        let (cx, cz, r2) = circle_through((xe, ze), (xm, zm), (xx, zx)).ok_or_else(|| {
            PlanError::InfeasibleSeed {
                report: "collinear seed arc points".into(),
            }
        })?;
        xs.iter()
            .map(|x| cz - (r2 - (x - cx) * (x - cx)).max(0.0).sqrt())
            .collect()
    };
    // Velocity angles along the arc, unwrapped to a continuous profile. The
    // path runs toward the cabin, so angles live near -pi; a flat first
    // segment must take the -pi branch rather than atan2's +pi.
    let mut phi = Vec::with_capacity(n2);
    for i in 1..=n2 {
        let mut a = (zs[i] - zs[i - 1]).atan2(xs[i] - xs[i - 1]);
        if i == 1 {
            if a > std::f64::consts::FRAC_PI_2 {
                a -= 2.0 * std::f64::consts::PI;
            }
            phi.push(a);
        } else {
            let prev: f64 = *phi.last().unwrap();
            phi.push(prev + wrap(a - prev));
        }
    }
    let theta_start = p.shell.plate_offset + phi[0] + p.seed_clearance;
    // Largest linear ramp keeping the clearance below pi at every waypoint.
    let mut ramp_cap = f64::INFINITY;
    for (i, phi_i) in phi.iter().enumerate() {
        let frac = (i + 1) as f64 / n2 as f64;
        let budget = std::f64::consts::PI - 0.1 - p.seed_clearance + (phi_i - phi[0]);
        ramp_cap = ramp_cap.min(budget / frac);
    }
    let target_ramp = (p.capacity.theta_full + 0.05 - theta_start).max(0.0);
    let mut ramp = target_ramp.min(ramp_cap.max(0.0));

    // Shrink the rotation ramp until every waypoint is reachable inside the
    // cylinder box; the program can re-grow the curl where feasible.
    let mut last_err = None;
    for _ in 0..25 {
        match seed_waypoints(params, swing, &xs, &zs, theta_start, ramp) {
            Ok(out) => return Ok(out),
            Err(e) => {
                last_err = Some(e);
                ramp *= 0.9;
            }
        }
    }
    Err(last_err.unwrap_or(PlanError::InfeasibleSeed {
        report: "seed construction failed".into(),
    }))
}

fn seed_waypoints(
    params: &ModelParams,
    swing: f64,
    xs: &[f64],
    zs: &[f64],
    theta_start: f64,
    ramp: f64,
) -> Result<(Vec<Vector3<f64>>, Vec<TipWaypoint>), PlanError> {
    let n2 = xs.len() - 1;
    let lim = &params.limits;
    let mut via = Vec::with_capacity(n2 + 1);
    let mut tips = Vec::with_capacity(n2 + 1);
    for i in 0..=n2 {
        let theta = theta_start + ramp * i as f64 / n2 as f64;
        let pose = TipPose {
            x: xs[i],
            z: zs[i],
            theta,
        };
        let mut q_theta = model::tip_ik(params, &pose).map_err(|e| PlanError::InfeasibleSeed {
            report: format!("waypoint {i}: {e}"),
        })?;
        q_theta[0] = swing;
        let q_l = model::joint_to_cylinder(params, &q_theta)?;
        for j in 0..3 {
            if q_l[j + 1] < lim.cylinder_lower_m[j] || q_l[j + 1] > lim.cylinder_upper_m[j] {
                return Err(PlanError::InfeasibleSeed {
                    report: format!(
                        "waypoint {i}: cylinder {j} length {} outside box",
                        q_l[j + 1]
                    ),
                });
            }
        }
        via.push(Vector3::new(q_l[1], q_l[2], q_l[3]));
        tips.push(TipWaypoint {
            x: xs[i],
            z: zs[i],
            theta,
        });
    }
    Ok((via, tips))
}

fn circle_through(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Option<(f64, f64, f64)> {
    let d = 2.0 * (a.0 * (b.1 - c.1) + b.0 * (c.1 - a.1) + c.0 * (a.1 - b.1));
    if d.abs() < 1e-12 {
        return None;
    }
    let a2 = a.0 * a.0 + a.1 * a.1;
    let b2 = b.0 * b.0 + b.1 * b.1;
    let c2 = c.0 * c.0 + c.1 * c.1;
    let ux = (a2 * (b.1 - c.1) + b2 * (c.1 - a.1) + c2 * (a.1 - b.1)) / d;
    let uz = (a2 * (c.0 - b.0) + b2 * (a.0 - c.0) + c2 * (b.0 - a.0)) / d;
    let r2 = (a.0 - ux) * (a.0 - ux) + (a.1 - uz) * (a.1 - uz);
    Some((ux, uz, r2))
}

/// Plan the cutting phase at a fixed swing angle.
pub fn plan_phase2(
    params: &ModelParams,
    problem: &Phase2Problem,
    swing: f64,
) -> Result<Phase2Plan, PlanError> {
    assert!(problem.segment_count >= 4);
    assert!(problem.travel_weight > 0.0 && problem.volume_weight > 0.0);
    problem.ground.validate()?;

    let (seed_via, seed_tips) = build_seed(params, problem, swing)?;
    let seed_path = TipPath {
        waypoints: seed_tips,
    };
    let seed_report = terrain::validate_phase2(&seed_path, &problem.ground, &problem.shell);
    if !seed_report.passes(PHASE2_TOL) {
        return Err(PlanError::InfeasibleSeed {
            report: format!("{seed_report:?}"),
        });
    }

    let nlp = Phase2Nlp {
        params,
        p: problem,
        points: problem.segment_count + 1,
        soft_sigma: 0.5 * (problem.entry_x - problem.exit_x).abs() / problem.segment_count as f64,
    };
    let mut seed = Vec::with_capacity(nlp.dim());
    for l in &seed_via {
        seed.extend_from_slice(&[l[0], l[1], l[2]]);
    }
    let seed_tips2 = nlp.tips(&seed);
    let seed_slack = nlp
        .swept(&seed_tips2)
        .min(nlp.capacity(seed_tips2[problem.segment_count].theta));
    seed.push(seed_slack.max(0.0));
    let seed_cost = nlp.objective(&seed);

    let mut opts = problem.solve.clone();
    if opts.ineq_multiplier_seed.is_none() {
        // Start the slack multipliers at the volume weight so the augmented
        // gradient vanishes in the slack direction at the seed.
        let mut seed_multipliers = vec![0.0; nlp.inequality_count()];
        let swept_row = nlp.inequality_count() - 4;
        seed_multipliers[swept_row] = problem.volume_weight;
        opts.ineq_multiplier_seed = Some(seed_multipliers);
    }
    let result = solver::solve(&nlp, &seed, &opts);
    // Snap a solver iterate exactly onto the surface/band/monotonicity set;
    // prefer the final iterate, then the certified-feasible best, and fall
    // back to the seed if neither survives.
    let mut candidates: Vec<Vec<f64>> = vec![result.x.clone()];
    if let Some((best, _)) = &result.best_feasible {
        candidates.push(best.clone());
    }
    let polished = candidates.into_iter().find_map(|raw| {
        let z = polish(params, problem, swing, &nlp, &raw)?;
        let tips = nlp.tips(&z);
        let path = TipPath::new(tips).ok()?;
        let report = terrain::validate_phase2(&path, &problem.ground, &problem.shell);
        let cost = nlp.objective(&z);
        if problem.solve.trace {
            eprintln!("polish: cost {cost:.6} (seed {seed_cost:.6}), report {report:?}");
        }
        (report.passes(PHASE2_TOL) && cost <= seed_cost + 1e-12).then_some((z, path, report, cost))
    });
    let (z, tip_path, report, cost, stop) = match polished {
        Some((z, path, report, cost)) => (z, path, report, cost, result.stop),
        None => {
            let tips = nlp.tips(&seed);
            let path = TipPath::new(tips)?;
            let report = terrain::validate_phase2(&path, &problem.ground, &problem.shell);
            (seed.clone(), path, report, seed_cost, StopReason::IterationCap)
        }
    };

    let via_points: Vec<Vector3<f64>> = (0..nlp.points).map(|i| nlp.lengths(&z, i)).collect();
    let volume = terrain::excavated_volume(&tip_path, &problem.ground, &problem.capacity)?;
    Ok(Phase2Plan {
        via_points,
        tip_path,
        volume,
        cost,
        seed_cost,
        report,
        outer_iterations: result.outer_iterations,
        inner_iterations: result.inner_iterations,
        converged: stop == StopReason::Converged,
    })
}

/// Deterministic micro-correction of a solver iterate: clamp the waypoints
/// into the cylinder box, re-solve the tip kinematics with the height pinned
/// into `[target, surface]` (endpoints exactly on the surface) and the
/// rotation made non-decreasing. Corrections are of the order of the
/// solver's residual; anything larger fails and the caller falls back.
fn polish(
    params: &ModelParams,
    problem: &Phase2Problem,
    swing: f64,
    nlp: &Phase2Nlp,
    z: &[f64],
) -> Option<Vec<f64>> {
    let lim = &params.limits;
    let g = &problem.ground;
    let n2 = nlp.points - 1;
    let tips = nlp.tips(z);
    let mut out = z.to_vec();
    let mut theta_floor = f64::NEG_INFINITY;
    for (i, tip) in tips.iter().enumerate() {
        let theta = tip.theta.max(theta_floor);
        let zi = if i == 0 || i == n2 {
            g.surface(tip.x)
        } else {
            tip.z.clamp(g.target(tip.x), g.surface(tip.x))
        };
        let pose = TipPose {
            x: tip.x,
            z: zi,
            theta,
        };
        let needs_snap =
            (zi - tip.z).abs() > 1e-12 || (theta - tip.theta).abs() > 1e-12;
        if needs_snap {
            // Reject as non-polishable when the correction is not tiny.
            if (zi - tip.z).abs() > 1e-4 || (theta - tip.theta) > 1e-4 {
                if problem.solve.trace {
                    eprintln!(
                        "polish: waypoint {i} needs dz {} dtheta {}",
                        zi - tip.z,
                        theta - tip.theta
                    );
                }
                return None;
            }
            let mut q_theta = model::tip_ik(params, &pose).ok()?;
            q_theta[0] = swing;
            let q_l = model::joint_to_cylinder(params, &q_theta).ok()?;
            for j in 0..3 {
                if q_l[j + 1] < lim.cylinder_lower_m[j] || q_l[j + 1] > lim.cylinder_upper_m[j] {
                    return None;
                }
                out[3 * i + j] = q_l[j + 1];
            }
        } else {
            for j in 0..3 {
                out[3 * i + j] =
                    out[3 * i + j].clamp(lim.cylinder_lower_m[j], lim.cylinder_upper_m[j]);
            }
        }
        theta_floor = theta;
    }
    Some(out)
}
