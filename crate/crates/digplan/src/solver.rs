//! Shared constrained solver: augmented-Lagrangian outer loop around a
//! limited-memory quasi-Newton inner minimizer.
//!
//! Inequalities are oriented `c(x) >= 0`, equalities `h(x) = 0`. Gradients
//! come from a user-supplied function or central finite differences with a
//! relative step of 1e-6. The solver never panics on nonconvergence; it
//! returns its best iterate with diagnostics.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

/// A smooth constrained program.
pub trait NlpProblem {
    fn dim(&self) -> usize;
    fn objective(&self, x: &[f64]) -> f64;

    fn inequality_count(&self) -> usize {
        0
    }
    /// Fill `out` with the inequality residuals (`>= 0` feasible).
    fn inequalities(&self, _x: &[f64], _out: &mut [f64]) {}

    fn equality_count(&self) -> usize {
        0
    }
    /// Fill `out` with the equality residuals (`= 0` feasible).
    fn equalities(&self, _x: &[f64], _out: &mut [f64]) {}

    /// Analytic objective gradient; return `false` to fall back to finite
    /// differences of the augmented Lagrangian.
    fn objective_gradient(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// Outer-loop configuration.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    /// Gradient-norm target of the augmented Lagrangian.
    pub kkt_tol: f64,
    /// Constraint-violation target.
    pub feasibility_tol: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub multiplier_clamp: f64,
    pub lbfgs_memory: usize,
    /// Cap on the infinity-norm of a line-search trial step; keeps the
    /// inner minimizer from teleporting into ill-conditioned regions.
    pub max_step: f64,
    /// Cooperative cancellation; checked once per inner iteration.
    pub cancel: Option<Arc<AtomicBool>>,
    /// Warm-start values for the inequality multipliers.
    pub ineq_multiplier_seed: Option<Vec<f64>>,
    /// Print per-outer-iteration diagnostics on stderr.
    pub trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_outer: 30,
            max_inner: 200,
            kkt_tol: 1e-6,
            feasibility_tol: 1e-7,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            multiplier_clamp: 1e9,
            lbfgs_memory: 12,
            max_step: f64::INFINITY,
            cancel: None,
            ineq_multiplier_seed: None,
            trace: false,
        }
    }
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    IterationCap,
    LineSearchFailure,
    Cancelled,
}

/// Solution and diagnostics.
#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Final iterate (preferred when it meets the feasibility tolerance).
    pub x: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    /// Best iterate that met the feasibility tolerance, with its objective.
    pub best_feasible: Option<(Vec<f64>, f64)>,
    pub kkt_residual: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub stop: StopReason,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }
}

struct Multipliers {
    ineq: Vec<f64>,
    eq: Vec<f64>,
    mu: f64,
}

struct Workspace {
    c: Vec<f64>,
    h: Vec<f64>,
}

fn augmented_value(p: &impl NlpProblem, x: &[f64], m: &Multipliers, ws: &mut Workspace) -> f64 {
    let mut value = p.objective(x);
    if !ws.c.is_empty() {
        p.inequalities(x, &mut ws.c);
        for (ci, li) in ws.c.iter().zip(&m.ineq) {
            let shifted = (li - m.mu * ci).max(0.0);
            value += (shifted * shifted - li * li) / (2.0 * m.mu);
        }
    }
    if !ws.h.is_empty() {
        p.equalities(x, &mut ws.h);
        for (hi, li) in ws.h.iter().zip(&m.eq) {
            value += li * hi + 0.5 * m.mu * hi * hi;
        }
    }
    value
}

fn augmented_gradient(
    p: &impl NlpProblem,
    x: &[f64],
    m: &Multipliers,
    ws: &mut Workspace,
    grad: &mut [f64],
) {
    // Central finite differences of the full augmented Lagrangian.
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = augmented_value(p, &xp, m, ws);
        xp[i] = orig - h;
        let fm = augmented_value(p, &xp, m, ws);
        xp[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
}

fn max_violation(ws: &Workspace) -> f64 {
    let ineq = ws.c.iter().fold(0.0_f64, |acc, c| acc.max(-c));
    let eq = ws.h.iter().fold(0.0_f64, |acc, h| acc.max(h.abs()));
    ineq.max(eq)
}

/// Minimize `objective` subject to the problem's constraints starting from
/// `seed`.
pub fn solve(p: &impl NlpProblem, seed: &[f64], opts: &SolveOptions) -> SolveResult {
    assert_eq!(seed.len(), p.dim());
    let n = p.dim();
    let mut x = seed.to_vec();
    let mut m = Multipliers {
        ineq: opts
            .ineq_multiplier_seed
            .clone()
            .unwrap_or_else(|| vec![0.0; p.inequality_count()]),
        eq: vec![0.0; p.equality_count()],
        mu: opts.initial_penalty,
    };
    assert_eq!(m.ineq.len(), p.inequality_count());
    let mut ws = Workspace {
        c: vec![0.0; p.inequality_count()],
        h: vec![0.0; p.equality_count()],
    };

    let evaluate_violation = |x: &[f64], ws: &mut Workspace| -> f64 {
        if !ws.c.is_empty() {
            let mut c = std::mem::take(&mut ws.c);
            p.inequalities(x, &mut c);
            ws.c = c;
        }
        if !ws.h.is_empty() {
            let mut h = std::mem::take(&mut ws.h);
            p.equalities(x, &mut h);
            ws.h = h;
        }
        max_violation(ws)
    };

    let mut best_x = x.clone();
    let mut best_violation = evaluate_violation(&x, &mut ws);
    let mut best_objective = p.objective(&x);
    let mut inner_total = 0;
    let mut stop = StopReason::IterationCap;
    let mut kkt = f64::INFINITY;
    let mut previous_violation = best_violation;
    let mut outer_done = 0;

    'outer: for outer in 0..opts.max_outer {
        outer_done = outer + 1;
        // Inner minimization of the augmented Lagrangian by L-BFGS with a
        // backtracking Armijo line search.
        let mut grad = vec![0.0; n];
        let mut value = augmented_value(p, &x, &m, &mut ws);
        augmented_gradient(p, &x, &m, &mut ws, &mut grad);
        let mut s_hist: Vec<Vec<f64>> = Vec::new();
        let mut y_hist: Vec<Vec<f64>> = Vec::new();
        let g0 = grad.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
        let inner_tol = (opts.kkt_tol).max(1e-2 * g0 * 0.25_f64.powi(outer as i32));

        for _ in 0..opts.max_inner {
            if let Some(cancel) = &opts.cancel {
                if cancel.load(Ordering::Relaxed) {
                    stop = StopReason::Cancelled;
                    break 'outer;
                }
            }
            let gnorm = grad.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
            kkt = gnorm;
            if gnorm < inner_tol {
                break;
            }
            // Two-loop recursion.
            let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
            let k = s_hist.len();
            let mut alpha_hist = vec![0.0; k];
            for i in (0..k).rev() {
                let rho = 1.0
                    / s_hist[i]
                        .iter()
                        .zip(&y_hist[i])
                        .map(|(s, y)| s * y)
                        .sum::<f64>();
                let a = rho * s_hist[i].iter().zip(&dir).map(|(s, d)| s * d).sum::<f64>();
                alpha_hist[i] = a;
                for (d, y) in dir.iter_mut().zip(&y_hist[i]) {
                    *d -= a * y;
                }
            }
            if k > 0 {
                let sy: f64 = s_hist[k - 1].iter().zip(&y_hist[k - 1]).map(|(s, y)| s * y).sum();
                let yy: f64 = y_hist[k - 1].iter().map(|y| y * y).sum();
                let scale = sy / yy.max(1e-300);
                for d in dir.iter_mut() {
                    *d *= scale;
                }
            }
            for i in 0..k {
                let rho = 1.0
                    / s_hist[i]
                        .iter()
                        .zip(&y_hist[i])
                        .map(|(s, y)| s * y)
                        .sum::<f64>();
                let b = rho * y_hist[i].iter().zip(&dir).map(|(y, d)| y * d).sum::<f64>();
                for (d, s) in dir.iter_mut().zip(&s_hist[i]) {
                    *d += (alpha_hist[i] - b) * s;
                }
            }
            let mut slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            if slope >= 0.0 {
                // Not a descent direction; restart from steepest descent.
                s_hist.clear();
                y_hist.clear();
                for (d, g) in dir.iter_mut().zip(&grad) {
                    *d = -g;
                }
                slope = -grad.iter().map(|g| g * g).sum::<f64>();
            }

            let dir_norm = dir.iter().fold(0.0_f64, |a, d| a.max(d.abs()));
            let mut step = if dir_norm > opts.max_step {
                opts.max_step / dir_norm
            } else {
                1.0
            };
            let mut accepted = false;
            let mut x_new = x.clone();
            let mut value_new = value;
            for _ in 0..40 {
                for i in 0..n {
                    x_new[i] = x[i] + step * dir[i];
                }
                value_new = augmented_value(p, &x_new, &m, &mut ws);
                if value_new <= value + 1e-4 * step * slope {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            inner_total += 1;
            if !accepted {
                stop = StopReason::LineSearchFailure;
                break;
            }
            let mut grad_new = vec![0.0; n];
            augmented_gradient(p, &x_new, &m, &mut ws, &mut grad_new);
            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            if sy > 1e-12 * s.iter().map(|v| v * v).sum::<f64>().sqrt()
                * y.iter().map(|v| v * v).sum::<f64>().sqrt()
            {
                s_hist.push(s);
                y_hist.push(y);
                if s_hist.len() > opts.lbfgs_memory {
                    s_hist.remove(0);
                    y_hist.remove(0);
                }
            }
            x = x_new;
            value = value_new;
            grad = grad_new;
        }

        // Multiplier and penalty updates at the inner solution.
        let violation = evaluate_violation(&x, &mut ws);
        if opts.trace {
            let worst_row = ws
                .c
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, c)| (i as isize, *c))
                .unwrap_or((-1, 0.0));
            let worst_eq = ws
                .h
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .map(|(i, h)| (i as isize, *h))
                .unwrap_or((-1, 0.0));
            let mut grad = vec![0.0; n];
            augmented_gradient(p, &x, &m, &mut ws, &mut grad);
            let gmax = grad
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .map(|(i, g)| (i, *g))
                .unwrap();
            eprintln!(
                "outer {outer}: f = {:.6e}, viol = {:.3e}, kkt = {:.3e}, mu = {:.1e}, inner = {inner_total}, stop = {stop:?}, worst ineq {worst_row:?}, worst eq {worst_eq:?}, gmax {gmax:?}",
                p.objective(&x),
                violation,
                kkt,
                m.mu
            );
        }
        for (li, ci) in m.ineq.iter_mut().zip(&ws.c) {
            *li = (*li - m.mu * ci).max(0.0).min(opts.multiplier_clamp);
        }
        for (li, hi) in m.eq.iter_mut().zip(&ws.h) {
            *li = (*li + m.mu * hi).clamp(-opts.multiplier_clamp, opts.multiplier_clamp);
        }
        let objective = p.objective(&x);
        if violation < best_violation.max(opts.feasibility_tol)
            && (violation < best_violation || objective < best_objective)
        {
            best_x.clone_from(&x);
            best_violation = violation;
            best_objective = objective;
        }
        if violation <= opts.feasibility_tol && kkt <= opts.kkt_tol {
            stop = StopReason::Converged;
            break;
        }
        // Grow the penalty only while the violation is far from tolerance;
        // near the solution the multiplier updates do the refinement and an
        // ever-growing penalty would only poison the inner conditioning.
        if violation > 0.25 * previous_violation && violation > 10.0 * opts.feasibility_tol {
            m.mu = (m.mu * opts.penalty_growth).min(1e6);
        }
        previous_violation = violation;
        stop = StopReason::IterationCap;
    }

    let final_violation = evaluate_violation(&x, &mut ws);
    let final_objective = p.objective(&x);
    let best_feasible = (best_violation <= opts.feasibility_tol)
        .then(|| (best_x, best_objective));

    SolveResult {
        x,
        objective: final_objective,
        max_violation: final_violation,
        best_feasible,
        kkt_residual: kkt,
        outer_iterations: outer_done,
        inner_iterations: inner_total,
        stop,
    }
}
