//! The excavator receding-horizon planner: stage constraints composed
//! through the feedback-linearization map, the tracking solve, and the
//! per-step loop glue.

use std::time::Instant;

use nalgebra::{DMatrix, SMatrix, SVector, Vector4};

use super::ddp::{self, DdpConfig, Multipliers, StageConstraints};
use super::fl;
use crate::error::ModelError;
use crate::model::{self, limits, ControlInput, CylinderState, ModelParams};
use crate::planner::GlobalTrajectory;

pub type State8 = SVector<f64, 8>;

pub fn pack_state(x: &CylinderState) -> State8 {
    let mut out = State8::zeros();
    out.fixed_rows_mut::<4>(0).copy_from(&x.q);
    out.fixed_rows_mut::<4>(4).copy_from(&x.dq);
    out
}

pub fn unpack_state(x: &State8) -> CylinderState {
    CylinderState::new(
        x.fixed_rows::<4>(0).into_owned(),
        x.fixed_rows::<4>(4).into_owned(),
    )
}

/// Receding-horizon configuration.
#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt_s: f64,
    /// Diagonal of the running weight on `[q_L, qdot_L]`.
    pub state_weights: [f64; 8],
    /// Terminal weight as a multiple of the running weight.
    pub terminal_scale: f64,
    /// Diagonal of the virtual-input weight.
    pub input_weights: [f64; 4],
    /// Fraction of the input/power/flow limits the planner may use; the
    /// reserve absorbs the tracking controller's corrections.
    pub limit_margin: f64,
    pub ddp: DdpConfig,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon: 50,
            dt_s: 0.02,
            state_weights: [1e4, 1e4, 1e4, 1e4, 1e2, 1e2, 1e2, 1e2],
            terminal_scale: 10.0,
            input_weights: [1e-2, 1e-2, 1e-2, 1e-2],
            limit_margin: 0.95,
            ddp: DdpConfig::default(),
        }
    }
}

/// Stage constraints of Eq.-style limit rows composed with the
/// feedback-linearization input map, normalized per row family. Terminal
/// rows keep only the input-free members (displacement and flow).
pub struct ExcavatorConstraints<'a> {
    params: &'a ModelParams,
    delta_hat_l: Vector4<f64>,
    scales: [f64; limits::RESIDUAL_COUNT],
    margin: f64,
    /// Width of the flow-rate smoothing near zero rates (m/s).
    smooth_eps: f64,
}

impl<'a> ExcavatorConstraints<'a> {
    pub fn new(params: &'a ModelParams, delta_hat_l: Vector4<f64>, margin: f64) -> Self {
        ExcavatorConstraints {
            params,
            delta_hat_l,
            scales: limits::residual_scales(&params.limits),
            margin,
            smooth_eps: 1e-4,
        }
    }

    fn input(&self, x: &State8, v: &Vector4<f64>) -> Result<Vector4<f64>, ModelError> {
        let state = unpack_state(x);
        Ok(fl::feedback_linearize(self.params, &state, v, &self.delta_hat_l)?.0)
    }

    /// Smoothed, margined, normalized rows. Layout matches
    /// [`limits::constraint_residuals`].
    fn rows_smooth(&self, x: &State8, v: &Vector4<f64>, out: &mut [f64]) {
        let lim = &self.params.limits;
        let u = match self.input(x, v) {
            Ok(u) => u,
            Err(_) => {
                // Outside the kinematic domain: report the input rows as
                // deeply violated so the solver backs off.
                out.fill(-1.0);
                return;
            }
        };
        let dq = x.fixed_rows::<4>(4).into_owned();
        let m = self.margin;
        for i in 0..4 {
            out[i] = (u[i] - m * lim.input_lower[i]) / self.scales[i];
            out[4 + i] = (m * lim.input_upper[i] - u[i]) / self.scales[4 + i];
        }
        out[8] = (m * lim.power_upper_w - u.dot(&dq)) / self.scales[8];
        for i in 0..3 {
            out[9 + i] = (x[1 + i] - lim.cylinder_lower_m[i]) / self.scales[9 + i];
            out[12 + i] = (lim.cylinder_upper_m[i] - x[1 + i]) / self.scales[12 + i];
        }
        out[15] = (m * lim.pump_flow_upper_m3_s[0] - self.smooth_flow(&lim.pump1, &dq))
            / self.scales[15];
        out[16] = (m * lim.pump_flow_upper_m3_s[1] - self.smooth_flow(&lim.pump2, &dq))
            / self.scales[16];
    }

    /// Pump flow with `|w| ~ sqrt(w^2 + eps^2)` and the expand/contract area
    /// blended over the same width, keeping the row C1 at zero rate.
    fn smooth_flow(&self, areas: &crate::model::PumpAreas, dq: &Vector4<f64>) -> f64 {
        let eps = self.smooth_eps;
        let mut flow = 0.0;
        for i in 0..4 {
            let w = dq[i];
            let mag = (w * w + eps * eps).sqrt();
            let blend = 0.5 * (1.0 + w / mag);
            let area =
                blend * areas.expand_areas_m2[i] + (1.0 - blend) * areas.contract_areas_m2[i];
            flow += area * mag;
        }
        flow
    }

    /// Input-free terminal rows: displacement box and flow bounds.
    fn terminal_rows_smooth(&self, x: &State8, out: &mut [f64]) {
        let lim = &self.params.limits;
        let dq = x.fixed_rows::<4>(4).into_owned();
        for i in 0..3 {
            out[i] = (x[1 + i] - lim.cylinder_lower_m[i]) / self.scales[9 + i];
            out[3 + i] = (lim.cylinder_upper_m[i] - x[1 + i]) / self.scales[12 + i];
        }
        out[6] = (self.margin * lim.pump_flow_upper_m3_s[0] - self.smooth_flow(&lim.pump1, &dq))
            / self.scales[15];
        out[7] = (self.margin * lim.pump_flow_upper_m3_s[1] - self.smooth_flow(&lim.pump2, &dq))
            / self.scales[16];
    }
}

impl StageConstraints<8, 4> for ExcavatorConstraints<'_> {
    fn rows(&self, _k: usize) -> usize {
        limits::RESIDUAL_COUNT
    }

    fn terminal_rows(&self) -> usize {
        8
    }

    fn eval(&self, _k: usize, x: &State8, v: &SVector<f64, 4>, out: &mut [f64]) {
        self.rows_smooth(x, &Vector4::from(*v), out);
    }

    fn eval_terminal(&self, x: &State8, out: &mut [f64]) {
        self.terminal_rows_smooth(x, out);
    }

    fn jacobian(
        &self,
        _k: usize,
        x: &State8,
        v: &SVector<f64, 4>,
        jx: &mut DMatrix<f64>,
        jv: &mut DMatrix<f64>,
    ) {
        // State block by central differences of the full row stack.
        let rows = limits::RESIDUAL_COUNT;
        let mut plus = vec![0.0; rows];
        let mut minus = vec![0.0; rows];
        let mut xp = *x;
        for j in 0..8 {
            let h = 1e-6 * x[j].abs().max(1.0);
            let orig = xp[j];
            xp[j] = orig + h;
            self.rows_smooth(&xp, v, &mut plus);
            xp[j] = orig - h;
            self.rows_smooth(&xp, v, &mut minus);
            xp[j] = orig;
            for i in 0..rows {
                jx[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        // Input block analytically: rows depend on v only through
        // u = h_L + M_L v, so d(row)/dv = d(row)/du * M_L.
        jv.fill(0.0);
        let state = unpack_state(x);
        if let Ok(terms) = model::cylinder_terms(self.params, &state) {
            let mass = terms.mass;
            let dq = state.dq;
            for i in 0..4 {
                for j in 0..4 {
                    jv[(i, j)] = mass[(i, j)] / self.scales[i];
                    jv[(4 + i, j)] = -mass[(i, j)] / self.scales[4 + i];
                }
            }
            let dp = mass.transpose() * dq;
            for j in 0..4 {
                jv[(8, j)] = -dp[j] / self.scales[8];
            }
        }
    }

    fn jacobian_terminal(&self, x: &State8, jx: &mut DMatrix<f64>) {
        let rows = 8;
        let mut plus = vec![0.0; rows];
        let mut minus = vec![0.0; rows];
        let mut xp = *x;
        for j in 0..8 {
            let h = 1e-6 * x[j].abs().max(1.0);
            let orig = xp[j];
            xp[j] = orig + h;
            self.terminal_rows_smooth(&xp, &mut plus);
            xp[j] = orig - h;
            self.terminal_rows_smooth(&xp, &mut minus);
            xp[j] = orig;
            for i in 0..rows {
                jx[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
    }

    /// Unsmoothed, unmargined rows for the feasibility gate.
    fn eval_exact(&self, _k: usize, x: &State8, v: &SVector<f64, 4>, out: &mut [f64]) {
        let state = unpack_state(x);
        let u = match self.input(x, &Vector4::from(*v)) {
            Ok(u) => ControlInput(u),
            Err(_) => {
                out.fill(-1.0);
                return;
            }
        };
        let residuals = limits::constraint_residuals(&self.params.limits, &state, &u);
        for (o, (r, s)) in out.iter_mut().zip(residuals.iter().zip(self.scales.iter())) {
            *o = r / s;
        }
    }

    fn eval_terminal_exact(&self, x: &State8, out: &mut [f64]) {
        let state = unpack_state(x);
        let residuals =
            limits::constraint_residuals(&self.params.limits, &state, &ControlInput::zero());
        for i in 0..6 {
            out[i] = residuals[9 + i] / self.scales[9 + i];
        }
        out[6] = residuals[15] / self.scales[15];
        out[7] = residuals[16] / self.scales[16];
    }
}

/// Result of one receding-horizon solve.
#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub states: Vec<State8>,
    pub virtual_inputs: Vec<Vector4<f64>>,
    pub inputs: Vec<ControlInput>,
    /// Minimum normalized residual per family (force, power, displacement,
    /// flow) over the horizon, from the unsmoothed rows.
    pub residual_minima: [f64; 4],
    pub iterations: usize,
    pub converged: bool,
    pub solve_time_s: f64,
    pub cost: f64,
}

/// One receding-horizon planner instance owning its warm-start state; use
/// one per control loop.
pub struct MpcPlanner {
    pub config: MpcConfig,
    a_d: SMatrix<f64, 8, 8>,
    b_d: SMatrix<f64, 8, 4>,
    q: SMatrix<f64, 8, 8>,
    r: SMatrix<f64, 4, 4>,
    p: SMatrix<f64, 8, 8>,
    warm: Option<Vec<SVector<f64, 4>>>,
    multipliers: Multipliers,
}

/// Planner output consumed by the tracking controller.
#[derive(Debug, Clone)]
pub struct PlanStep {
    /// Next-step planned state handed to the motion controller.
    pub reference: CylinderState,
    /// First realized input of the plan (feedforward / direct-drive).
    pub feedforward: ControlInput,
    pub solution: MpcSolution,
}

impl MpcPlanner {
    pub fn new(config: MpcConfig) -> Self {
        let (a_d, b_d) = fl::discretize(config.dt_s);
        let q = SMatrix::<f64, 8, 8>::from_diagonal(&SVector::<f64, 8>::from_column_slice(
            &config.state_weights,
        ));
        let r = SMatrix::<f64, 4, 4>::from_diagonal(&SVector::<f64, 4>::from_column_slice(
            &config.input_weights,
        ));
        let p = config.terminal_scale * q;
        MpcPlanner {
            config,
            a_d,
            b_d,
            q,
            r,
            p,
            warm: None,
            multipliers: Multipliers::default(),
        }
    }

    /// Discard warm-start state (e.g. between scenarios).
    pub fn reset(&mut self) {
        self.warm = None;
        self.multipliers = Multipliers::default();
    }

    /// Solve the tracking problem for one reference window.
    pub fn solve(
        &mut self,
        params: &ModelParams,
        x0: &CylinderState,
        reference: &[State8],
        delta_hat_l: &Vector4<f64>,
    ) -> Result<MpcSolution, ddp::DdpError> {
        assert_eq!(reference.len(), self.config.horizon + 1);
        let start = Instant::now();
        let n = self.config.horizon;
        // Shift the previous plan by one step, repeating the last input.
        let warm: Vec<SVector<f64, 4>> = match &self.warm {
            Some(prev) if prev.len() == n => {
                let mut w: Vec<SVector<f64, 4>> = prev[1..].to_vec();
                w.push(*prev.last().unwrap());
                w
            }
            _ => vec![SVector::<f64, 4>::zeros(); n],
        };
        let constraints = ExcavatorConstraints::new(params, *delta_hat_l, self.config.limit_margin);
        let sol = ddp::solve_al_ddp(
            &self.a_d,
            &self.b_d,
            &self.q,
            &self.r,
            &self.p,
            &pack_state(x0),
            reference,
            &warm,
            &constraints,
            &mut self.multipliers,
            &self.config.ddp,
        )?;
        self.warm = Some(sol.inputs.clone());

        // Realized inputs and exact residual minima per family.
        let mut inputs = Vec::with_capacity(n);
        let mut minima = [f64::INFINITY; 4];
        let mut rows = [0.0; limits::RESIDUAL_COUNT];
        for k in 0..n {
            constraints.eval_exact(k, &sol.states[k], &sol.inputs[k], &mut rows);
            for (row, value) in rows.iter().enumerate() {
                let fam = limits::family_of_row(row);
                minima[fam] = minima[fam].min(*value);
            }
            let state = unpack_state(&sol.states[k]);
            let u = fl::feedback_linearize(params, &state, &Vector4::from(sol.inputs[k]), delta_hat_l)
                .map(|u| u.0)
                .unwrap_or_else(|_| Vector4::zeros());
            inputs.push(ControlInput(u));
        }
        let mut trows = [0.0; 8];
        constraints.eval_terminal_exact(&sol.states[n], &mut trows);
        for (i, value) in trows.iter().enumerate() {
            let fam = if i < 6 { 2 } else { 3 };
            minima[fam] = minima[fam].min(*value);
        }

        Ok(MpcSolution {
            virtual_inputs: sol.inputs.iter().map(|v| Vector4::from(*v)).collect(),
            inputs,
            states: sol.states,
            residual_minima: minima,
            iterations: sol.ddp_iterations,
            converged: sol.converged,
            solve_time_s: start.elapsed().as_secs_f64(),
            cost: sol.cost,
        })
    }

    /// Extract the reference window at time `t` (held at the trajectory end)
    /// and solve; returns the one-step-ahead planned state and the first
    /// realized input.
    pub fn plan_step(
        &mut self,
        params: &ModelParams,
        t: f64,
        x0: &CylinderState,
        delta_hat_l: &Vector4<f64>,
        global: &GlobalTrajectory,
    ) -> Result<PlanStep, ddp::DdpError> {
        let n = self.config.horizon;
        let reference: Vec<State8> = (0..=n)
            .map(|k| {
                let sample = global.eval(t + k as f64 * self.config.dt_s);
                let mut s = State8::zeros();
                s.fixed_rows_mut::<4>(0).copy_from(&sample.q);
                s.fixed_rows_mut::<4>(4).copy_from(&sample.dq);
                s
            })
            .collect();
        let solution = self.solve(params, x0, &reference, delta_hat_l)?;
        Ok(PlanStep {
            reference: unpack_state(&solution.states[1]),
            feedforward: solution.inputs[0],
            solution,
        })
    }
}
