//! Euler-Lagrange dynamics of the swing + boom/arm/bucket chain.
//!
//! The Lagrangian treats the machine as a cabin spinning about the vertical
//! axis carrying a planar 3R chain. For a point at cabin-frame coordinates
//! `(x, z)` the squared world speed is `xdot^2 + zdot^2 + x^2 psidot^2`, and a
//! link whose axis makes the in-plane angle `phi` contributes
//! `I cos(phi)^2` to the yaw inertia. The Coriolis matrix is assembled from
//! Christoffel symbols of the first kind with analytic mass-matrix partials,
//! so `Mdot = C + C^T` holds identically; the momentum observer depends on
//! that identity.

use nalgebra::{Matrix4, Vector2, Vector4};

use super::kinematics::{self, Jacobians};
use super::params::ModelParams;
use super::state::{ControlInput, CylinderState, JointState};
use crate::error::ModelError;

/// Mass matrix, Coriolis matrix and gravity vector in joint coordinates.
#[derive(Debug, Clone)]
pub struct JointDynamics {
    pub mass: Matrix4<f64>,
    pub coriolis: Matrix4<f64>,
    pub gravity: Vector4<f64>,
}

impl JointDynamics {
    /// Combined Coriolis-centrifugal and gravity bias `h = C qdot + G`.
    pub fn bias(&self, dq: &Vector4<f64>) -> Vector4<f64> {
        self.coriolis * dq + self.gravity
    }
}

/// Mass matrix and bias of the cylinder-coordinate dynamics.
#[derive(Debug, Clone)]
pub struct CylinderDynamics {
    pub mass: Matrix4<f64>,
    pub bias: Vector4<f64>,
    pub jac: Jacobians,
}

/// Geometric quantities of the planar chain reused by all assembly routines.
struct ChainGeometry {
    /// Cumulative link angles.
    phi: [f64; 3],
    /// Centre-of-mass positions, planar.
    com: [Vector2<f64>; 3],
    /// `lever[j][i] = d com_j / d theta_i` (zero for i > j).
    lever: [[Vector2<f64>; 3]; 3],
}

fn chain_geometry(params: &ModelParams, q_theta: &Vector4<f64>) -> ChainGeometry {
    let phi = kinematics::cumulative_angles(q_theta);
    let links = params.links();
    let u = phi.map(|p| Vector2::new(p.cos(), p.sin()));
    let w = phi.map(|p| Vector2::new(-p.sin(), p.cos()));

    let pivot0 = Vector2::new(params.boom_pivot_x_m, params.boom_pivot_z_m);
    let mut pivots = [pivot0; 3];
    for j in 1..3 {
        pivots[j] = pivots[j - 1] + links[j - 1].length_m * u[j - 1];
    }
    let mut com = [Vector2::zeros(); 3];
    for j in 0..3 {
        com[j] = pivots[j] + links[j].com_offset_m * u[j];
    }
    let mut lever = [[Vector2::zeros(); 3]; 3];
    for j in 0..3 {
        for i in 0..=j {
            let mut v = links[j].com_offset_m * w[j];
            for m in i..j {
                v += links[m].length_m * w[m];
            }
            lever[j][i] = v;
        }
    }
    ChainGeometry { phi, com, lever }
}

/// Mass matrix and its partial derivatives with respect to the three arm
/// joint angles (the swing angle never enters `M`).
fn mass_matrix_with_grad(params: &ModelParams, q_theta: &Vector4<f64>) -> (Matrix4<f64>, [Matrix4<f64>; 3]) {
    let geo = chain_geometry(params, q_theta);
    let links = params.links();
    let u = geo.phi.map(|p| Vector2::new(p.cos(), p.sin()));

    let mut mass = Matrix4::zeros();
    let mut grad = [Matrix4::zeros(); 3];

    // Yaw row: cabin inertia, point-mass terms and link spin projections.
    let mut yaw = params.cabin_yaw_inertia_kg_m2;
    for j in 0..3 {
        let (m, inertia) = (links[j].mass_kg, links[j].inertia_kg_m2);
        yaw += m * geo.com[j].x * geo.com[j].x + inertia * geo.phi[j].cos().powi(2);
    }
    mass[(0, 0)] = yaw;
    for t in 0..3 {
        let mut dyaw = 0.0;
        for j in t..3 {
            let (m, inertia) = (links[j].mass_kg, links[j].inertia_kg_m2);
            dyaw += 2.0 * m * geo.com[j].x * geo.lever[j][t].x
                - 2.0 * inertia * geo.phi[j].cos() * geo.phi[j].sin();
        }
        grad[t][(0, 0)] = dyaw;
    }

    // Planar block: translational levers plus rotational coupling.
    for i in 0..3 {
        for k in i..3 {
            let mut entry = 0.0;
            for j in k..3 {
                entry += links[j].mass_kg * geo.lever[j][i].dot(&geo.lever[j][k])
                    + links[j].inertia_kg_m2;
            }
            mass[(i + 1, k + 1)] = entry;
            mass[(k + 1, i + 1)] = entry;
        }
    }
    // d lever[j][i] / d theta_t = -(r_j u_j + sum_{max(i,t) <= m < j} l_m u_m)
    // whenever t <= j, zero otherwise.
    let dlever = |j: usize, i: usize, t: usize| -> Vector2<f64> {
        if t > j || i > j {
            return Vector2::zeros();
        }
        let mut v = links[j].com_offset_m * u[j];
        for m in i.max(t)..j {
            v += links[m].length_m * u[m];
        }
        -v
    };
    for t in 0..3 {
        for i in 0..3 {
            for k in i..3 {
                let mut entry = 0.0;
                for j in k..3 {
                    entry += links[j].mass_kg
                        * (dlever(j, i, t).dot(&geo.lever[j][k])
                            + geo.lever[j][i].dot(&dlever(j, k, t)));
                }
                grad[t][(i + 1, k + 1)] = entry;
                grad[t][(k + 1, i + 1)] = entry;
            }
        }
    }
    (mass, grad)
}

/// Assemble `M`, `C` (Christoffel) and `G` at a joint state.
pub fn joint_terms(params: &ModelParams, x: &JointState) -> JointDynamics {
    let (mass, grad) = mass_matrix_with_grad(params, &x.q);
    // dM/dq stacked as 4 matrices; the swing derivative is zero.
    let dm = |k: usize| -> &Matrix4<f64> {
        static ZERO: Matrix4<f64> = Matrix4::new(
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        );
        if k == 0 {
            &ZERO
        } else {
            &grad[k - 1]
        }
    };
    let mut coriolis = Matrix4::zeros();
    for i in 0..4 {
        for j in 0..4 {
            let mut entry = 0.0;
            for k in 0..4 {
                let christoffel =
                    0.5 * (dm(k)[(i, j)] + dm(j)[(i, k)] - dm(i)[(j, k)]);
                entry += christoffel * x.dq[k];
            }
            coriolis[(i, j)] = entry;
        }
    }
    let geo = chain_geometry(params, &x.q);
    let mut gravity = Vector4::zeros();
    for i in 0..3 {
        let mut gi = 0.0;
        for j in i..3 {
            gi += params.links()[j].mass_kg * geo.lever[j][i].y;
        }
        gravity[i + 1] = params.gravity_m_s2 * gi;
    }
    JointDynamics {
        mass,
        coriolis,
        gravity,
    }
}

/// Gravitational potential relative to the cabin-frame origin.
pub fn potential_energy(params: &ModelParams, q_theta: &Vector4<f64>) -> f64 {
    let geo = chain_geometry(params, q_theta);
    let mut e = 0.0;
    for j in 0..3 {
        e += params.links()[j].mass_kg * geo.com[j].y;
    }
    params.gravity_m_s2 * e
}

/// Kinetic plus potential energy of a joint state.
pub fn total_energy(params: &ModelParams, x: &JointState) -> f64 {
    let terms = joint_terms(params, x);
    0.5 * x.dq.dot(&(terms.mass * x.dq)) + potential_energy(params, &x.q)
}

/// Joint acceleration under Eq.-of-motion forcing `J_theta^T u + Delta`.
pub fn joint_acceleration(
    params: &ModelParams,
    x: &JointState,
    u: &ControlInput,
    delta: &Vector4<f64>,
) -> Result<Vector4<f64>, ModelError> {
    let terms = joint_terms(params, x);
    let q_l = kinematics::joint_to_cylinder(params, &x.q)?;
    let jac = kinematics::jacobians(params, &q_l)?;
    let rhs = -terms.bias(&x.dq) + jac.j_theta.transpose() * u.0 + delta;
    solve_spd(&terms.mass, &rhs)
}

/// Assemble the cylinder-coordinate mass matrix and bias.
pub fn cylinder_terms(params: &ModelParams, x: &CylinderState) -> Result<CylinderDynamics, ModelError> {
    let q_theta = kinematics::cylinder_to_joint(params, &x.q)?;
    let jac = kinematics::jacobians(params, &x.q)?;
    let dq_theta = jac.j_l * x.dq;
    let joint = joint_terms(params, &JointState::new(q_theta, dq_theta));
    let j_l_dot = jac.j_l_dot(params, &x.q, &x.dq);
    let mass = jac.j_l.transpose() * joint.mass * jac.j_l;
    let bias = jac.j_l.transpose() * (joint.mass * (j_l_dot * x.dq) + joint.bias(&dq_theta));
    Ok(CylinderDynamics { mass, bias, jac })
}

/// Cylinder-coordinate acceleration `M_L^{-1}(-h_L + u + Delta_L)`.
pub fn cylinder_acceleration(
    params: &ModelParams,
    x: &CylinderState,
    u: &ControlInput,
    delta_l: &Vector4<f64>,
) -> Result<Vector4<f64>, ModelError> {
    let terms = cylinder_terms(params, x)?;
    let rhs = -terms.bias + u.0 + delta_l;
    solve_spd(&terms.mass, &rhs)
}

/// Force producing a desired cylinder-coordinate acceleration (nominal,
/// disturbance-free inverse dynamics).
pub fn cylinder_inverse_dynamics(
    params: &ModelParams,
    x: &CylinderState,
    ddq_l: &Vector4<f64>,
) -> Result<ControlInput, ModelError> {
    let terms = cylinder_terms(params, x)?;
    Ok(ControlInput(terms.mass * ddq_l + terms.bias))
}

fn solve_spd(mass: &Matrix4<f64>, rhs: &Vector4<f64>) -> Result<Vector4<f64>, ModelError> {
    if let Some(chol) = mass.cholesky() {
        Ok(chol.solve(rhs))
    } else {
        mass.lu()
            .solve(rhs)
            .ok_or(ModelError::NonFinite { context: "mass matrix solve" })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::{random_joint_state, random_q_l};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn params() -> ModelParams {
        ModelParams::default()
    }


    #[test]
    fn mass_gradient_matches_finite_differences() {
        let p = params();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let x = random_joint_state(&p, &mut rng);
            let (mass, grad) = mass_matrix_with_grad(&p, &x.q);
            // Finite differences at these magnitudes (entries ~1e5) carry
            // ~1e-5 absolute roundoff, so compare against the matrix scale.
            let scale = mass.norm();
            let h = 1e-6;
            for t in 0..3 {
                let mut qp = x.q;
                let mut qm = x.q;
                qp[t + 1] += h;
                qm[t + 1] -= h;
                let (mp, _) = mass_matrix_with_grad(&p, &qp);
                let (mm, _) = mass_matrix_with_grad(&p, &qm);
                let fd = (mp - mm) / (2.0 * h);
                for i in 0..4 {
                    for j in 0..4 {
                        assert!(
                            (fd[(i, j)] - grad[t][(i, j)]).abs() / scale < 1e-7,
                            "dM mismatch at t={t} ({i},{j}): fd {} vs {}",
                            fd[(i, j)],
                            grad[t][(i, j)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn skew_symmetry_of_mdot_minus_two_c() {
        let p = params();
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..200 {
            let x = random_joint_state(&p, &mut rng);
            let terms = joint_terms(&p, &x);
            // Mdot by finite differences along the motion.
            let h = 1e-6;
            let xp = JointState::new(x.q + x.dq * h, x.dq);
            let xm = JointState::new(x.q - x.dq * h, x.dq);
            let mdot = (joint_terms(&p, &xp).mass - joint_terms(&p, &xm).mass) / (2.0 * h);
            let skew = x.dq.dot(&((mdot - 2.0 * terms.coriolis) * x.dq));
            // Normalize by the kinetic-energy scale before comparing.
            let scale = x.dq.dot(&(terms.mass * x.dq)).abs().max(1.0);
            assert!(
                (skew / scale).abs() < 1e-8,
                "skew residual {} at scale {scale}",
                skew / scale
            );
        }
    }

    #[test]
    fn rest_bias_is_gravity_and_swing_gravity_vanishes() {
        let p = params();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let mut x = random_joint_state(&p, &mut rng);
            x.dq = Vector4::zeros();
            let terms = joint_terms(&p, &x);
            assert_relative_eq!(terms.bias(&x.dq), terms.gravity, epsilon = 1e-12);
            assert_eq!(terms.gravity[0], 0.0);
        }
    }

    #[test]
    fn mass_matrix_positive_definite() {
        let p = params();
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = random_joint_state(&p, &mut rng);
            let terms = joint_terms(&p, &x);
            let eig = terms.mass.symmetric_eigenvalues();
            assert!(eig.min() > 0.0, "non-SPD mass matrix: {eig:?}");
            // And so is the cylinder-coordinate image.
            let q_l = kinematics::joint_to_cylinder(&p, &x.q).unwrap();
            let jac = kinematics::jacobians(&p, &q_l).unwrap();
            let xl = CylinderState::new(q_l, jac.j_theta * x.dq);
            let cyl = cylinder_terms(&p, &xl).unwrap();
            assert!(cyl.mass.symmetric_eigenvalues().min() > 0.0);
        }
    }

    /// Independent kinetic-energy assembly: world-frame link velocities from
    /// the chain geometry directly, bypassing the mass-matrix code path.
    fn kinetic_energy_from_links(p: &ModelParams, x: &JointState) -> f64 {
        let phi = kinematics::cumulative_angles(&x.q);
        let links = p.links();
        let mut pivot = Vector2::new(p.boom_pivot_x_m, p.boom_pivot_z_m);
        let mut pivot_vel = Vector2::zeros();
        let mut omega = 0.0;
        let psi_dot = x.dq[0];
        let mut energy = 0.5 * p.cabin_yaw_inertia_kg_m2 * psi_dot * psi_dot;
        for j in 0..3 {
            omega += x.dq[j + 1];
            let u = Vector2::new(phi[j].cos(), phi[j].sin());
            let w = Vector2::new(-phi[j].sin(), phi[j].cos());
            let com = pivot + links[j].com_offset_m * u;
            let com_vel = pivot_vel + links[j].com_offset_m * omega * w;
            energy += 0.5
                * links[j].mass_kg
                * (com_vel.norm_squared() + com.x * com.x * psi_dot * psi_dot);
            energy += 0.5 * links[j].inertia_kg_m2 * omega * omega;
            energy += 0.5 * links[j].inertia_kg_m2 * (phi[j].cos() * psi_dot).powi(2);
            pivot += links[j].length_m * u;
            pivot_vel += links[j].length_m * omega * w;
        }
        energy
    }

    #[test]
    fn cylinder_mass_matrix_matches_energy_assembly() {
        let p = params();
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..100 {
            let x = random_joint_state(&p, &mut rng);
            let q_l = kinematics::joint_to_cylinder(&p, &x.q).unwrap();
            let jac = kinematics::jacobians(&p, &q_l).unwrap();
            let dq_l = jac.j_theta * x.dq;
            let xl = CylinderState::new(q_l, dq_l);
            let cyl = cylinder_terms(&p, &xl).unwrap();
            // Quadratic-form identity: KE(dq_L) = 1/2 dq_L' M_L dq_L, with the
            // kinetic energy computed from link velocities independently.
            let ke = kinetic_energy_from_links(&p, &x);
            let quad = 0.5 * dq_l.dot(&(cyl.mass * dq_l));
            assert_relative_eq!(quad, ke, max_relative = 1e-10);
        }
    }

    #[test]
    fn coordinate_change_consistency() {
        let p = params();
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..100 {
            let x = random_joint_state(&p, &mut rng);
            let u = ControlInput(Vector4::new(
                rng.gen_range(-5e4..5e4),
                rng.gen_range(-2e5..2e5),
                rng.gen_range(-1e5..1e5),
                rng.gen_range(-1e5..1e5),
            ));
            let delta = Vector4::new(
                rng.gen_range(-1e4..1e4),
                rng.gen_range(-1e4..1e4),
                rng.gen_range(-1e4..1e4),
                rng.gen_range(-1e4..1e4),
            );
            let ddq_theta = joint_acceleration(&p, &x, &u, &delta).unwrap();

            let q_l = kinematics::joint_to_cylinder(&p, &x.q).unwrap();
            let jac = kinematics::jacobians(&p, &q_l).unwrap();
            let xl = CylinderState::new(q_l, jac.j_theta * x.dq);
            let delta_l = jac.j_l.transpose() * delta;
            let ddq_l = cylinder_acceleration(&p, &xl, &u, &delta_l).unwrap();
            // qddot_theta = J_L qddot_L + Jdot_L qdot_L.
            let j_l_dot = jac.j_l_dot(&p, &xl.q, &xl.dq);
            let mapped = jac.j_l * ddq_l + j_l_dot * xl.dq;
            let rel = (mapped - ddq_theta).norm() / ddq_theta.norm().max(1e-9);
            assert!(rel < 1e-8, "coordinate-change mismatch: rel {rel}");
        }
    }

    #[test]
    fn static_balance_in_cylinder_coordinates() {
        let p = params();
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..50 {
            let q_l = random_q_l(&p, &mut rng, 0.02);
            let x = CylinderState::at_rest(q_l);
            let terms = cylinder_terms(&p, &x).unwrap();
            let ddq = cylinder_acceleration(&p, &x, &ControlInput(terms.bias), &Vector4::zeros())
                .unwrap();
            assert!(ddq.norm() < 1e-9, "residual acceleration {}", ddq.norm());
        }
    }

    #[test]
    fn energy_conserved_without_forcing() {
        let mut p = params();
        p.gravity_m_s2 = 0.0;
        let q0 = Vector4::new(0.2, 0.6, -1.4, 0.4);
        let dq0 = Vector4::new(0.3, 0.15, -0.2, 0.25);
        let mut x = JointState::new(q0, dq0);
        let e0 = total_energy(&p, &x);
        let dt = 1e-3;
        let f = |s: &JointState| -> Vector4<f64> {
            let terms = joint_terms(&p, s);
            solve_spd(&terms.mass, &(-terms.bias(&s.dq))).unwrap()
        };
        for _ in 0..10_000 {
            let k1q = x.dq;
            let k1v = f(&x);
            let x2 = JointState::new(x.q + 0.5 * dt * k1q, x.dq + 0.5 * dt * k1v);
            let k2q = x2.dq;
            let k2v = f(&x2);
            let x3 = JointState::new(x.q + 0.5 * dt * k2q, x.dq + 0.5 * dt * k2v);
            let k3q = x3.dq;
            let k3v = f(&x3);
            let x4 = JointState::new(x.q + dt * k3q, x.dq + dt * k3v);
            let k4q = x4.dq;
            let k4v = f(&x4);
            x = JointState::new(
                x.q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
                x.dq + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
            );
        }
        let drift = (total_energy(&p, &x) - e0).abs() / e0.abs();
        assert!(drift < 1e-3, "energy drift {drift}");
    }
}
