//! Constrained LQ tracking by differential dynamic programming under an
//! augmented Lagrangian.
//!
//! The dynamics are linear and constant (the feedback-linearized double
//! integrator), the tracking cost quadratic, and the stage constraints
//! nonlinear. Inequalities enter through the usual shifted quadratic
//! penalty; the backward pass uses Gauss-Newton constraint curvature with
//! Levenberg regularization on the control Hessian, and the forward pass is
//! a backtracking line search accepting on actual cost decrease.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

/// Stage constraint provider: rows oriented `>= 0` feasible.
pub trait StageConstraints<const NX: usize, const NV: usize> {
    fn rows(&self, k: usize) -> usize;
    fn terminal_rows(&self) -> usize;

    /// Solver-facing (possibly smoothed) rows.
    fn eval(&self, k: usize, x: &SVector<f64, NX>, v: &SVector<f64, NV>, out: &mut [f64]);
    fn eval_terminal(&self, x: &SVector<f64, NX>, out: &mut [f64]);

    fn jacobian(
        &self,
        k: usize,
        x: &SVector<f64, NX>,
        v: &SVector<f64, NV>,
        jx: &mut DMatrix<f64>,
        jv: &mut DMatrix<f64>,
    );
    fn jacobian_terminal(&self, x: &SVector<f64, NX>, jx: &mut DMatrix<f64>);

    /// Unsmoothed rows used by the feasibility gate; defaults to the
    /// solver-facing rows.
    fn eval_exact(&self, k: usize, x: &SVector<f64, NX>, v: &SVector<f64, NV>, out: &mut [f64]) {
        self.eval(k, x, v, out);
    }
    fn eval_terminal_exact(&self, x: &SVector<f64, NX>, out: &mut [f64]) {
        self.eval_terminal(x, out);
    }
}

/// An unconstrained problem.
pub struct NoConstraints;

impl<const NX: usize, const NV: usize> StageConstraints<NX, NV> for NoConstraints {
    fn rows(&self, _k: usize) -> usize {
        0
    }
    fn terminal_rows(&self) -> usize {
        0
    }
    fn eval(&self, _k: usize, _x: &SVector<f64, NX>, _v: &SVector<f64, NV>, _out: &mut [f64]) {}
    fn eval_terminal(&self, _x: &SVector<f64, NX>, _out: &mut [f64]) {}
    fn jacobian(
        &self,
        _k: usize,
        _x: &SVector<f64, NX>,
        _v: &SVector<f64, NV>,
        _jx: &mut DMatrix<f64>,
        _jv: &mut DMatrix<f64>,
    ) {
    }
    fn jacobian_terminal(&self, _x: &SVector<f64, NX>, _jx: &mut DMatrix<f64>) {}
}

/// Solver configuration.
#[derive(Debug, Clone)]
pub struct DdpConfig {
    pub max_ddp_iterations: usize,
    pub max_outer_iterations: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub multiplier_clamp: f64,
    pub regularization_init: f64,
    pub regularization_floor: f64,
    /// Relative cost-decrease threshold ending a DDP sweep.
    pub cost_tolerance: f64,
    /// Constraint-violation target on the exact rows.
    pub violation_tolerance: f64,
    /// Smallest line-search step, as a power of two.
    pub line_search_exponent: u32,
}

impl Default for DdpConfig {
    fn default() -> Self {
        DdpConfig {
            max_ddp_iterations: 60,
            max_outer_iterations: 8,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            multiplier_clamp: 1e8,
            regularization_init: 1e-8,
            regularization_floor: 1e-8,
            cost_tolerance: 1e-8,
            violation_tolerance: 1e-6,
            line_search_exponent: 10,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum DdpError {
    #[error("non-finite state in rollout at stage {stage}")]
    NonFiniteRollout { stage: usize },
}

/// Multiplier storage reusable across receding-horizon solves.
#[derive(Debug, Clone, Default)]
pub struct Multipliers {
    pub stages: Vec<DVector<f64>>,
    pub terminal: DVector<f64>,
}

impl Multipliers {
    fn reset<const NX: usize, const NV: usize>(
        &mut self,
        constraints: &impl StageConstraints<NX, NV>,
        horizon: usize,
    ) {
        let fits = self.stages.len() == horizon
            && (0..horizon).all(|k| self.stages[k].len() == constraints.rows(k))
            && self.terminal.len() == constraints.terminal_rows();
        if !fits {
            self.stages = (0..horizon)
                .map(|k| DVector::zeros(constraints.rows(k)))
                .collect();
            self.terminal = DVector::zeros(constraints.terminal_rows());
        }
    }
}

/// Solution trajectory with diagnostics.
#[derive(Debug, Clone)]
pub struct DdpSolution<const NX: usize, const NV: usize> {
    pub states: Vec<SVector<f64, NX>>,
    pub inputs: Vec<SVector<f64, NV>>,
    pub cost: f64,
    pub max_violation: f64,
    pub ddp_iterations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
}

/// Shifted quadratic penalty for `c >= 0` rows.
fn penalty(c: f64, lambda: f64, mu: f64) -> f64 {
    let shifted = (lambda - mu * c).max(0.0);
    (shifted * shifted - lambda * lambda) / (2.0 * mu)
}

fn penalty_slope(c: f64, lambda: f64, mu: f64) -> f64 {
    -(lambda - mu * c).max(0.0)
}

struct Problem<'a, const NX: usize, const NV: usize, C: StageConstraints<NX, NV>> {
    a: &'a SMatrix<f64, NX, NX>,
    b: &'a SMatrix<f64, NX, NV>,
    q: &'a SMatrix<f64, NX, NX>,
    r: &'a SMatrix<f64, NV, NV>,
    p: &'a SMatrix<f64, NX, NX>,
    x_ref: &'a [SVector<f64, NX>],
    constraints: &'a C,
    horizon: usize,
}

impl<const NX: usize, const NV: usize, C: StageConstraints<NX, NV>> Problem<'_, NX, NV, C> {
    fn tracking_cost(&self, xs: &[SVector<f64, NX>], vs: &[SVector<f64, NV>]) -> f64 {
        let mut cost = 0.0;
        for k in 0..self.horizon {
            let e = xs[k] - self.x_ref[k];
            cost += e.dot(&(self.q * e)) + vs[k].dot(&(self.r * vs[k]));
        }
        let e = xs[self.horizon] - self.x_ref[self.horizon];
        cost + e.dot(&(self.p * e))
    }

    fn augmented_cost(
        &self,
        xs: &[SVector<f64, NX>],
        vs: &[SVector<f64, NV>],
        m: &Multipliers,
        mu: f64,
        scratch: &mut Vec<f64>,
    ) -> f64 {
        let mut cost = self.tracking_cost(xs, vs);
        for k in 0..self.horizon {
            let rows = self.constraints.rows(k);
            scratch.resize(rows, 0.0);
            self.constraints.eval(k, &xs[k], &vs[k], scratch);
            for (c, l) in scratch.iter().zip(m.stages[k].iter()) {
                cost += penalty(*c, *l, mu);
            }
        }
        let rows = self.constraints.terminal_rows();
        scratch.resize(rows, 0.0);
        self.constraints.eval_terminal(&xs[self.horizon], scratch);
        for (c, l) in scratch.iter().zip(m.terminal.iter()) {
            cost += penalty(*c, *l, mu);
        }
        cost
    }

    fn max_exact_violation(&self, xs: &[SVector<f64, NX>], vs: &[SVector<f64, NV>]) -> f64 {
        let mut worst = 0.0_f64;
        let mut scratch = Vec::new();
        for k in 0..self.horizon {
            scratch.resize(self.constraints.rows(k), 0.0);
            self.constraints.eval_exact(k, &xs[k], &vs[k], &mut scratch);
            for c in &scratch {
                worst = worst.max(-c);
            }
        }
        scratch.resize(self.constraints.terminal_rows(), 0.0);
        self.constraints
            .eval_terminal_exact(&xs[self.horizon], &mut scratch);
        for c in &scratch {
            worst = worst.max(-c);
        }
        worst
    }
}

/// Solve the constrained tracking problem from `x0` with a warm-started
/// input sequence; `x_ref` must hold `horizon + 1` reference states.
#[allow(clippy::too_many_arguments)]
pub fn solve_al_ddp<const NX: usize, const NV: usize, C: StageConstraints<NX, NV>>(
    a: &SMatrix<f64, NX, NX>,
    b: &SMatrix<f64, NX, NV>,
    q: &SMatrix<f64, NX, NX>,
    r: &SMatrix<f64, NV, NV>,
    p: &SMatrix<f64, NX, NX>,
    x0: &SVector<f64, NX>,
    x_ref: &[SVector<f64, NX>],
    warm_inputs: &[SVector<f64, NV>],
    constraints: &C,
    multipliers: &mut Multipliers,
    cfg: &DdpConfig,
) -> Result<DdpSolution<NX, NV>, DdpError> {
    let horizon = x_ref.len() - 1;
    assert_eq!(warm_inputs.len(), horizon);
    multipliers.reset(constraints, horizon);
    let problem = Problem {
        a,
        b,
        q,
        r,
        p,
        x_ref,
        constraints,
        horizon,
    };

    // Initial rollout.
    let mut vs: Vec<SVector<f64, NV>> = warm_inputs.to_vec();
    let mut xs = vec![*x0; horizon + 1];
    for k in 0..horizon {
        xs[k + 1] = a * xs[k] + b * vs[k];
        if !xs[k + 1].iter().all(|e| e.is_finite()) {
            return Err(DdpError::NonFiniteRollout { stage: k + 1 });
        }
    }

    let mut mu = cfg.initial_penalty;
    let mut scratch = Vec::new();
    let mut reg = cfg.regularization_init;
    let mut ddp_total = 0;
    let mut converged_inner = false;
    let mut previous_violation = f64::INFINITY;
    let mut outer_done = 0;

    for outer in 0..cfg.max_outer_iterations {
        outer_done = outer + 1;
        let mut cost = problem.augmented_cost(&xs, &vs, multipliers, mu, &mut scratch);
        converged_inner = false;
        for _ in 0..cfg.max_ddp_iterations {
            ddp_total += 1;
            let Some((k_ff, gains)) = backward_pass(&problem, &xs, &vs, multipliers, mu, reg)
            else {
                reg = (reg * 10.0).max(cfg.regularization_floor).min(1e10);
                continue;
            };
            // Forward line search.
            let mut accepted = false;
            let mut alpha = 1.0;
            for _ in 0..=cfg.line_search_exponent {
                let mut xs_new = xs.clone();
                let mut vs_new = vs.clone();
                let mut finite = true;
                for k in 0..horizon {
                    let dv = alpha * k_ff[k] + gains[k] * (xs_new[k] - xs[k]);
                    vs_new[k] = vs[k] + dv;
                    xs_new[k + 1] = a * xs_new[k] + b * vs_new[k];
                    if !xs_new[k + 1].iter().all(|e| e.is_finite()) {
                        finite = false;
                        break;
                    }
                }
                if finite {
                    let cost_new =
                        problem.augmented_cost(&xs_new, &vs_new, multipliers, mu, &mut scratch);
                    if cost_new < cost {
                        let decrease = (cost - cost_new).abs() / cost.abs().max(1.0);
                        xs = xs_new;
                        vs = vs_new;
                        cost = cost_new;
                        accepted = true;
                        reg = (reg * 0.5).max(cfg.regularization_floor);
                        if decrease < cfg.cost_tolerance {
                            converged_inner = true;
                        }
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                reg = (reg * 10.0).min(1e10);
                if reg >= 1e10 {
                    converged_inner = true; // cannot improve further
                    break;
                }
                continue;
            }
            if converged_inner {
                break;
            }
        }

        // Multiplier and penalty updates on the solver-facing rows.
        let mut violation = 0.0_f64;
        for k in 0..horizon {
            scratch.resize(problem.constraints.rows(k), 0.0);
            problem.constraints.eval(k, &xs[k], &vs[k], &mut scratch);
            for (l, c) in multipliers.stages[k].iter_mut().zip(scratch.iter()) {
                *l = (*l - mu * c).max(0.0).min(cfg.multiplier_clamp);
                violation = violation.max(-c);
            }
        }
        scratch.resize(problem.constraints.terminal_rows(), 0.0);
        problem
            .constraints
            .eval_terminal(&xs[horizon], &mut scratch);
        for (l, c) in multipliers.terminal.iter_mut().zip(scratch.iter()) {
            *l = (*l - mu * c).max(0.0).min(cfg.multiplier_clamp);
            violation = violation.max(-c);
        }

        let exact_violation = problem.max_exact_violation(&xs, &vs);
        if exact_violation <= cfg.violation_tolerance && converged_inner {
            let tracking = problem.tracking_cost(&xs, &vs);
            return Ok(DdpSolution {
                states: xs,
                inputs: vs,
                cost: tracking,
                max_violation: exact_violation,
                ddp_iterations: ddp_total,
                outer_iterations: outer_done,
                converged: true,
            });
        }
        if violation > 0.25 * previous_violation
            && violation > 10.0 * cfg.violation_tolerance
        {
            mu = (mu * cfg.penalty_growth).min(1e10);
        }
        previous_violation = violation;
    }

    let exact_violation = problem.max_exact_violation(&xs, &vs);
    let tracking = problem.tracking_cost(&xs, &vs);
    Ok(DdpSolution {
        states: xs,
        inputs: vs,
        cost: tracking,
        max_violation: exact_violation,
        ddp_iterations: ddp_total,
        outer_iterations: outer_done,
        converged: exact_violation <= cfg.violation_tolerance && converged_inner,
    })
}

type BackwardGains<const NX: usize, const NV: usize> =
    (Vec<SVector<f64, NV>>, Vec<SMatrix<f64, NV, NX>>);

fn backward_pass<const NX: usize, const NV: usize, C: StageConstraints<NX, NV>>(
    problem: &Problem<'_, NX, NV, C>,
    xs: &[SVector<f64, NX>],
    vs: &[SVector<f64, NV>],
    m: &Multipliers,
    mu: f64,
    reg: f64,
) -> Option<BackwardGains<NX, NV>> {
    let horizon = problem.horizon;
    let mut k_ff = vec![SVector::<f64, NV>::zeros(); horizon];
    let mut gains = vec![SMatrix::<f64, NV, NX>::zeros(); horizon];

    // Terminal expansion.
    let e_n = xs[horizon] - problem.x_ref[horizon];
    let mut v_x: SVector<f64, NX> = 2.0 * problem.p * e_n;
    let mut v_xx: SMatrix<f64, NX, NX> = 2.0 * problem.p;
    let t_rows = problem.constraints.terminal_rows();
    if t_rows > 0 {
        let mut c = vec![0.0; t_rows];
        problem.constraints.eval_terminal(&xs[horizon], &mut c);
        let mut jx = DMatrix::zeros(t_rows, NX);
        problem.constraints.jacobian_terminal(&xs[horizon], &mut jx);
        accumulate_constraint_terms::<NX, NV>(&c, &m.terminal, mu, &jx, None, &mut v_x, &mut v_xx, None, None, None);
    }

    let mut c_buf = Vec::new();
    for k in (0..horizon).rev() {
        let e = xs[k] - problem.x_ref[k];
        let mut l_x: SVector<f64, NX> = 2.0 * problem.q * e;
        let mut l_v: SVector<f64, NV> = 2.0 * problem.r * vs[k];
        let mut l_xx: SMatrix<f64, NX, NX> = 2.0 * problem.q;
        let mut l_vv: SMatrix<f64, NV, NV> = 2.0 * problem.r;
        let mut l_vx: SMatrix<f64, NV, NX> = SMatrix::zeros();
        let rows = problem.constraints.rows(k);
        if rows > 0 {
            c_buf.resize(rows, 0.0);
            problem.constraints.eval(k, &xs[k], &vs[k], &mut c_buf);
            let mut jx = DMatrix::zeros(rows, NX);
            let mut jv = DMatrix::zeros(rows, NV);
            problem.constraints.jacobian(k, &xs[k], &vs[k], &mut jx, &mut jv);
            accumulate_constraint_terms(
                &c_buf,
                &m.stages[k],
                mu,
                &jx,
                Some(&jv),
                &mut l_x,
                &mut l_xx,
                Some(&mut l_v),
                Some(&mut l_vv),
                Some(&mut l_vx),
            );
        }

        let q_x = l_x + problem.a.transpose() * v_x;
        let q_v = l_v + problem.b.transpose() * v_x;
        let q_xx = l_xx + problem.a.transpose() * v_xx * problem.a;
        let mut q_vv = l_vv + problem.b.transpose() * v_xx * problem.b;
        for i in 0..NV {
            q_vv[(i, i)] += reg;
        }
        let q_vx = l_vx + problem.b.transpose() * v_xx * problem.a;

        let chol = q_vv.cholesky()?;
        let kf = -chol.solve(&q_v);
        let kg = -chol.solve(&q_vx);
        v_x = q_x
            + kg.transpose() * (q_vv * kf)
            + kg.transpose() * q_v
            + q_vx.transpose() * kf;
        v_xx = q_xx
            + kg.transpose() * q_vv * kg
            + kg.transpose() * q_vx
            + q_vx.transpose() * kg;
        v_xx = 0.5 * (v_xx + v_xx.transpose());
        k_ff[k] = kf;
        gains[k] = kg;
    }
    Some((k_ff, gains))
}

/// Add the first-order penalty slopes and Gauss-Newton curvature of the
/// constraint rows into the stage expansion.
#[allow(clippy::too_many_arguments)]
fn accumulate_constraint_terms<const NX: usize, const NV: usize>(
    c: &[f64],
    lambda: &DVector<f64>,
    mu: f64,
    jx: &DMatrix<f64>,
    jv: Option<&DMatrix<f64>>,
    l_x: &mut SVector<f64, NX>,
    l_xx: &mut SMatrix<f64, NX, NX>,
    mut l_v: Option<&mut SVector<f64, NV>>,
    mut l_vv: Option<&mut SMatrix<f64, NV, NV>>,
    mut l_vx: Option<&mut SMatrix<f64, NV, NX>>,
) {
    for (i, ci) in c.iter().enumerate() {
        let li = lambda[i];
        let slope = penalty_slope(*ci, li, mu);
        let active = li - mu * ci > 0.0;
        let weight = if active { mu } else { 0.0 };
        for a_ in 0..NX {
            let gx = jx[(i, a_)];
            l_x[a_] += slope * gx;
            if weight > 0.0 {
                for b_ in 0..NX {
                    l_xx[(a_, b_)] += weight * gx * jx[(i, b_)];
                }
            }
        }
        if let Some(jv) = jv {
            if let Some(l_v) = l_v.as_deref_mut() {
                for a_ in 0..NV {
                    l_v[a_] += slope * jv[(i, a_)];
                }
            }
            if weight > 0.0 {
                if let Some(l_vv) = l_vv.as_deref_mut() {
                    for a_ in 0..NV {
                        for b_ in 0..NV {
                            l_vv[(a_, b_)] += weight * jv[(i, a_)] * jv[(i, b_)];
                        }
                    }
                }
                if let Some(l_vx) = l_vx.as_deref_mut() {
                    for a_ in 0..NV {
                        for b_ in 0..NX {
                            l_vx[(a_, b_)] += weight * jv[(i, a_)] * jx[(i, b_)];
                        }
                    }
                }
            }
        }
    }
}
