//! Ground-truth simulator with emulated, planner-unknown disturbances.
//!
//! The plant integrates the joint-coordinate dynamics with classical RK4,
//! adding steady-state cylinder friction (Coulomb + Stribeck + viscous) and
//! a depth-based soil-cutting resistance mapped through the tip Jacobian.
//! Both force models exist purely for disturbance emulation; nothing in the
//! planning stack reads them.

use nalgebra::{Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::model::{self, ControlInput, JointState, ModelParams};
use crate::terrain::GroundModel;

/// Steady-state friction curve parameters, one entry per cylinder
/// `[boom, arm, bucket]`; the swing channel is viscous-only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrictionParams {
    pub coulomb_n: [f64; 3],
    pub static_n: [f64; 3],
    pub stribeck_m_s: [f64; 3],
    pub viscous_n_s_m: [f64; 3],
    pub swing_viscous_n_m_s: f64,
}

impl Default for FrictionParams {
    fn default() -> Self {
        FrictionParams {
            coulomb_n: [8_000.0, 6_000.0, 4_000.0],
            static_n: [12_000.0, 9_000.0, 6_000.0],
            stribeck_m_s: [0.01, 0.01, 0.01],
            viscous_n_s_m: [20_000.0, 15_000.0, 10_000.0],
            swing_viscous_n_m_s: 5_000.0,
        }
    }
}

/// Soil-cutting resistance parameters of the depth-based two-term model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoilParams {
    pub unit_weight_kg_m3: f64,
    pub cohesion_pa: f64,
    pub n_c: f64,
    pub n_gamma: f64,
    pub width_m: f64,
    /// Normal-to-tangential force ratio.
    pub normal_ratio: f64,
}

impl Default for SoilParams {
    fn default() -> Self {
        SoilParams {
            unit_weight_kg_m3: 1800.0,
            cohesion_pa: 10_000.0,
            n_c: 5.0,
            n_gamma: 1.5,
            width_m: 1.2,
            normal_ratio: 0.3,
        }
    }
}

/// Speed below which the friction curve ramps linearly through zero. The
/// discontinuous curve would make an explicit integrator chatter around
/// stick at an amplitude of `F_s dt / M`; inside the band the force acts as
/// strong viscous damping instead.
pub const STICK_BAND_M_S: f64 = 0.01;

/// Steady-state friction force for one cylinder at sliding speed `v`.
pub fn friction_force(v: f64, coulomb: f64, stiction: f64, stribeck: f64, viscous: f64) -> f64 {
    let full = |v: f64| {
        let sign = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        viscous * v + sign * (coulomb + (stiction - coulomb) * (-(v / stribeck).powi(2)).exp())
    };
    if v.abs() < STICK_BAND_M_S {
        full(STICK_BAND_M_S) * v / STICK_BAND_M_S
    } else {
        full(v)
    }
}

/// Soil reaction mapped to joint coordinates: resistive force opposite the
/// tip velocity plus a normal component, active only while the tip cuts
/// below the surface at a nonzero rate.
pub fn soil_force(
    params: &ModelParams,
    soil: &SoilParams,
    ground: &GroundModel,
    q_theta: &Vector4<f64>,
    dq_theta: &Vector4<f64>,
) -> Vector4<f64> {
    let pose = model::tip_pose_from_joints(params, q_theta);
    let depth = (ground.surface(pose.x) - pose.z).max(0.0);
    if depth == 0.0 {
        return Vector4::zeros();
    }
    let planar = model::tip_jacobian_joints(params, q_theta);
    let arm_rates = Vector4::new(dq_theta[1], dq_theta[2], dq_theta[3], 0.0);
    let tip_velocity = Vector2::new(
        planar[(0, 0)] * arm_rates[0] + planar[(0, 1)] * arm_rates[1] + planar[(0, 2)] * arm_rates[2],
        planar[(1, 0)] * arm_rates[0] + planar[(1, 1)] * arm_rates[1] + planar[(1, 2)] * arm_rates[2],
    );
    let speed = tip_velocity.norm();
    if speed < 1e-6 {
        return Vector4::zeros();
    }
    let magnitude = soil.width_m
        * depth
        * (soil.cohesion_pa * soil.n_c
            + soil.unit_weight_kg_m3 * params.gravity_m_s2 * depth * soil.n_gamma);
    let tangent = -tip_velocity / speed;
    // Normal picked with a non-negative vertical component: the uncut ground
    // pushes the bucket out of the cut.
    let mut normal = Vector2::new(-tangent.y, tangent.x);
    if normal.y < 0.0 {
        normal = -normal;
    }
    let force = magnitude * (tangent + soil.normal_ratio * normal);
    let mut delta = Vector4::zeros();
    for j in 0..3 {
        delta[j + 1] = planar[(0, j)] * force.x + planar[(1, j)] * force.y;
    }
    delta
}

/// Plant state and integrator.
#[derive(Debug, Clone)]
pub struct Plant {
    pub friction: FrictionParams,
    pub soil: SoilParams,
    pub ground: GroundModel,
    pub state: JointState,
    pub time: f64,
    /// Integrator substep (s).
    pub dt: f64,
    /// Disturbance evaluated at the last accepted state, for logging.
    pub last_disturbance: Vector4<f64>,
}

impl Plant {
    pub fn new(
        friction: FrictionParams,
        soil: SoilParams,
        ground: GroundModel,
        initial: JointState,
        dt: f64,
    ) -> Self {
        assert!(dt > 0.0);
        Plant {
            friction,
            soil,
            ground,
            state: initial,
            time: 0.0,
            dt,
            last_disturbance: Vector4::zeros(),
        }
    }

    /// Total emulated disturbance at a state: soil reaction plus cylinder
    /// friction mapped through the input coupling.
    pub fn disturbance(&self, params: &ModelParams, x: &JointState) -> Result<Vector4<f64>, SimError> {
        let soil = soil_force(params, &self.soil, &self.ground, &x.q, &x.dq);
        let q_l = model::joint_to_cylinder(params, &x.q)?;
        let jac = model::jacobians(params, &q_l)?;
        let dq_l = jac.j_theta * x.dq;
        let mut friction_cyl = Vector4::zeros();
        friction_cyl[0] = self.friction.swing_viscous_n_m_s * dq_l[0];
        for j in 0..3 {
            friction_cyl[j + 1] = friction_force(
                dq_l[j + 1],
                self.friction.coulomb_n[j],
                self.friction.static_n[j],
                self.friction.stribeck_m_s[j],
                self.friction.viscous_n_s_m[j],
            );
        }
        Ok(soil - jac.j_theta.transpose() * friction_cyl)
    }

    /// Integrate over `duration` holding `u`, at the plant substep; the
    /// disturbance is re-evaluated inside every RK4 stage.
    pub fn step(&mut self, params: &ModelParams, u: &ControlInput, duration: f64) -> Result<(), SimError> {
        assert!(u.0.iter().all(|v| v.is_finite()), "non-finite input");
        let substeps = (duration / self.dt).round().max(1.0) as usize;
        let dt = duration / substeps as f64;
        for _ in 0..substeps {
            let f = |s: &JointState| -> Result<(Vector4<f64>, Vector4<f64>), SimError> {
                let delta = self.disturbance(params, s)?;
                let ddq = model::joint_acceleration(params, s, u, &delta)?;
                Ok((s.dq, ddq))
            };
            let x = self.state;
            let (k1q, k1v) = f(&x)?;
            let x2 = JointState::new(x.q + 0.5 * dt * k1q, x.dq + 0.5 * dt * k1v);
            let (k2q, k2v) = f(&x2)?;
            let x3 = JointState::new(x.q + 0.5 * dt * k2q, x.dq + 0.5 * dt * k2v);
            let (k3q, k3v) = f(&x3)?;
            let x4 = JointState::new(x.q + dt * k3q, x.dq + dt * k3v);
            let (k4q, k4v) = f(&x4)?;
            self.state = JointState::new(
                x.q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
                x.dq + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
            );
            self.time += dt;
            if !self.state.is_finite() {
                return Err(SimError::Diverged {
                    t: self.time,
                    what: "non-finite plant state".into(),
                });
            }
        }
        self.last_disturbance = self.disturbance(params, &self.state)?;
        Ok(())
    }
}
