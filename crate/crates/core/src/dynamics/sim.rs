//! Fixed-step integration with penalty contact.
//!
//! Generalized velocity is handled internally as `nu = [v_world, w_body,
//! joint_rates]`. Each contact is a spring-damper that is linearly implicit
//! in the end-of-step point velocity `v`:
//!
//! ```text
//! f = f0 - D v,   f0 = (0, 0, k * depth),   D = diag(c_t, c_t, c_n + k dt)
//! ```
//!
//! projected onto the friction cone (no pulling, |f_t| <= mu f_n). Joints
//! about to cross a limit get a unilateral row that stops them on it. The
//! coupled forces are found by projected Gauss-Seidel, then
//! `nu+ = nu + dt M^-1 (h + G^T f)` and positions follow with the new
//! velocities (semi-implicit Euler). With nothing in contact this is plain
//! semi-implicit Euler.

use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};

use super::contact::{ground_candidates, self_collisions, Contact, ContactReport};
use super::kinematics::leg_frames;
use super::model::{RobotModel, NUM_JOINTS};
use super::state::{GeneralizedState, U_DIM};
use crate::error::{ensure_finite, Error, Result};

type Mat18 = SMatrix<f64, U_DIM, U_DIM>;
type Vec18 = SVector<f64, U_DIM>;
type Jac = SMatrix<f64, 3, U_DIM>;

const MAX_SWEEPS: usize = 200;
const SWEEP_TOLERANCE: f64 = 1e-10;

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

struct ActiveContact {
    index: usize,
    jacobian: Jac,
    depth: f64,
}

pub fn step(
    model: &RobotModel,
    state: &GeneralizedState,
    torques: &[f64; NUM_JOINTS],
    dt: f64,
) -> Result<(GeneralizedState, ContactReport)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !state.is_finite() {
        return Err(Error::NonFinite("simulator state".into()));
    }
    ensure_finite("joint torques", torques)?;

    let rot = state.orientation();
    let rot_m = *rot.to_rotation_matrix().matrix();
    let omega = state.base_angular_velocity();
    let v_world = rot * state.base_linear_velocity();

    let mut nu = Vec18::zeros();
    nu.fixed_rows_mut::<3>(0).copy_from(&v_world);
    nu.fixed_rows_mut::<3>(3).copy_from(&omega);
    for j in 0..NUM_JOINTS {
        nu[6 + j] = state.u[6 + j];
    }

    let mass = model.total_mass();
    let inertia = model.lumped_inertia();
    let inertia_inv = inertia
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("singular base inertia".into()))?;
    let joint_inertia = model.joint_inertias();

    let mut mass_matrix = Mat18::zeros();
    for k in 0..3 {
        mass_matrix[(k, k)] = mass;
    }
    mass_matrix.fixed_view_mut::<3, 3>(3, 3).copy_from(&inertia);
    for j in 0..NUM_JOINTS {
        mass_matrix[(6 + j, 6 + j)] = joint_inertia[j % 3];
    }

    let mut bias = Vec18::zeros();
    bias[2] = -mass * model.gravity;
    bias.fixed_rows_mut::<3>(3)
        .copy_from(&(-omega.cross(&(inertia * omega))));
    for j in 0..NUM_JOINTS {
        bias[6 + j] = torques[j];
    }

    let frames = leg_frames(model, state);
    let candidates = ground_candidates(model, &frames);
    let base = state.base_position();

    let mut contacts: Vec<Contact> = Vec::with_capacity(candidates.len());
    let mut jacobians: Vec<Jac> = Vec::with_capacity(candidates.len());
    let mut active = Vec::new();
    for (index, cand) in candidates.iter().enumerate() {
        let world = base + rot * cand.local;
        let signed_gap = world.z - cand.radius;
        let (gap, depth) = if signed_gap <= 0.0 { (0.0, -signed_gap) } else { (signed_gap, 0.0) };
        contacts.push(Contact {
            point_id: cand.point_id,
            class: cand.class,
            gap,
            penetration: depth,
            impulse: [0.0; 3],
            velocity: [0.0; 3],
        });
        let mut jacobian = Jac::zeros();
        jacobian.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        jacobian
            .fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-rot_m * skew(&cand.local)));
        if let Some((leg, leg_jac)) = cand.leg {
            jacobian
                .fixed_view_mut::<3, 3>(0, 6 + 3 * leg)
                .copy_from(&(rot_m * leg_jac));
        }
        // points about to reach the ground within the step are included too,
        // so the implicit spring sees them before they penetrate
        let approach = (jacobian.row(2) * nu)[0] - model.gravity * dt;
        if signed_gap <= 0.0 || signed_gap + 2.0 * dt * approach.min(0.0) < 0.0 {
            active.push(ActiveContact {
                index,
                jacobian,
                depth: -signed_gap,
            });
        }
        jacobians.push(jacobian);
    }

    let joint_angles: [f64; NUM_JOINTS] = std::array::from_fn(|j| state.q[7 + j]);
    let solution = solve_velocity(
        model,
        &active,
        &mass_matrix,
        &inertia_inv,
        &nu,
        &bias,
        &joint_angles,
        dt,
    )?;
    let forces = &solution.forces;
    let generalized_force = bias + solution.generalized;
    let mut nu_next = nu;
    for k in 0..3 {
        nu_next[k] += dt * generalized_force[k] / mass;
    }
    let ang = inertia_inv * generalized_force.fixed_rows::<3>(3);
    for k in 0..3 {
        nu_next[3 + k] += dt * ang[k];
    }
    for j in 0..NUM_JOINTS {
        nu_next[6 + j] += dt * generalized_force[6 + j] / joint_inertia[j % 3];
    }

    for (c, f) in active.iter().zip(forces) {
        let contact = &mut contacts[c.index];
        contact.impulse = (f * dt).into();
        if f.z > 0.0 {
            contact.gap = 0.0;
        }
    }
    for (contact, jacobian) in contacts.iter_mut().zip(&jacobians) {
        contact.velocity = (jacobian * nu_next).into();
    }

    // foot candidates are the first four, in leg order
    let foot_positions = std::array::from_fn(|leg| (base + rot * frames[leg].foot).into());
    let foot_velocities = std::array::from_fn(|leg| contacts[leg].velocity);
    contacts.extend(self_collisions(model, &frames));

    let mut next = state.clone();
    let v_next = Vector3::new(nu_next[0], nu_next[1], nu_next[2]);
    let w_next = Vector3::new(nu_next[3], nu_next[4], nu_next[5]);
    next.set_base_position(base + dt * v_next);
    let dq = UnitQuaternion::from_scaled_axis(w_next * dt);
    let rot_next = UnitQuaternion::new_normalize((rot * dq).into_inner());
    next.set_orientation(rot_next);
    next.set_base_linear_velocity(rot_next.inverse_transform_vector(&v_next));
    next.set_base_angular_velocity(w_next);
    for j in 0..NUM_JOINTS {
        let [lo, hi] = model.joint_limit(j);
        let mut angle = state.q[7 + j] + dt * nu_next[6 + j];
        let mut rate = nu_next[6 + j];
        if solution.limited[j] {
            angle = angle.clamp(lo, hi);
            rate = 0.0;
        } else if angle < lo {
            angle = lo;
            rate = 0.0;
        } else if angle > hi {
            angle = hi;
            rate = 0.0;
        }
        next.q[7 + j] = angle;
        next.u[6 + j] = rate;
    }
    next.time = state.time + dt;

    if !next.is_finite() {
        return Err(Error::NonFinite("integrated state".into()));
    }
    Ok((
        next,
        ContactReport {
            contacts,
            foot_positions,
            foot_velocities,
        },
    ))
}

/// Mechanical energy: kinetic (base, joints) + gravitational (lumped mass)
/// + elastic energy stored in penetrating contact springs.
pub fn mechanical_energy(model: &RobotModel, state: &GeneralizedState) -> f64 {
    let v = state.base_linear_velocity();
    let w = state.base_angular_velocity();
    let inertia = model.lumped_inertia();
    let joint_inertia = model.joint_inertias();
    let joint_ke: f64 = state
        .joint_velocities()
        .iter()
        .enumerate()
        .map(|(j, qd)| 0.5 * joint_inertia[j % 3] * qd * qd)
        .sum();
    let frames = leg_frames(model, state);
    let rot = state.orientation();
    let base = state.base_position();
    let elastic: f64 = ground_candidates(model, &frames)
        .iter()
        .map(|c| {
            let depth = (c.radius - (base + rot * c.local).z).max(0.0);
            0.5 * model.contact_stiffness * depth * depth
        })
        .sum();
    0.5 * model.total_mass() * v.norm_squared()
        + 0.5 * w.dot(&(inertia * w))
        + joint_ke
        + model.total_mass() * model.gravity * state.q[2]
        + elastic
}

struct VelocitySolution {
    forces: Vec<Vector3<f64>>,
    /// Joints held on a limit during this step.
    limited: [bool; NUM_JOINTS],
    /// Generalized constraint force (contacts and limits).
    generalized: Vec18,
}

/// A joint-limit row: joint index, bound, and +1 for a lower bound, -1 for an
/// upper bound.
struct LimitRow {
    joint: usize,
    min_rate: f64,
    sign: f64,
}

/// Projected Gauss-Seidel on the constraint forces.
///
/// Contact `i` obeys the implicit penalty law `f = f0 - D v` projected onto
/// the friction cone, where `v` is the end-of-step point velocity; joint-limit
/// rows are rigid and unilateral. Row velocities are `v = v_free + dt W f`
/// with `W = G M^-1 G^T`.
fn solve_velocity(
    model: &RobotModel,
    active: &[ActiveContact],
    mass_matrix: &Mat18,
    inertia_inv: &Matrix3<f64>,
    nu: &Vec18,
    bias: &Vec18,
    joint_angles: &[f64; NUM_JOINTS],
    dt: f64,
) -> Result<VelocitySolution> {
    let k = model.contact_stiffness;
    let damping = Vector3::new(
        model.tangential_damping,
        model.tangential_damping,
        model.contact_damping + k * dt,
    );
    let mu = model.friction_coeff;

    let apply_inv_mass = |g: &Vec18| -> Vec18 {
        let mut out = Vec18::zeros();
        for r in 0..3 {
            out[r] = g[r] / mass_matrix[(r, r)];
        }
        let ang = inertia_inv * g.fixed_rows::<3>(3);
        for r in 0..3 {
            out[3 + r] = ang[r];
        }
        for r in 6..U_DIM {
            out[r] = g[r] / mass_matrix[(r, r)];
        }
        out
    };
    let free = nu + dt * apply_inv_mass(bias);

    let limits: Vec<LimitRow> = (0..NUM_JOINTS)
        .filter_map(|j| {
            let [lo, hi] = model.joint_limit(j);
            let angle = joint_angles[j];
            let next = angle + dt * free[6 + j];
            if next <= lo || angle <= lo {
                Some(LimitRow { joint: j, min_rate: (lo - angle) / dt, sign: 1.0 })
            } else if next >= hi || angle >= hi {
                Some(LimitRow { joint: j, min_rate: (angle - hi) / dt, sign: -1.0 })
            } else {
                None
            }
        })
        .collect();

    let n_rows = 3 * active.len() + limits.len();
    let mut forces = vec![Vector3::zeros(); active.len()];
    let mut limited = [false; NUM_JOINTS];
    if n_rows == 0 {
        return Ok(VelocitySolution { forces, limited, generalized: Vec18::zeros() });
    }

    // constraint rows G (n_rows x 18); limit rows are signed unit rows
    let mut rows: Vec<Vec18> = Vec::with_capacity(n_rows);
    for c in active {
        for r in 0..3 {
            rows.push(c.jacobian.row(r).transpose());
        }
    }
    for l in &limits {
        let mut row = Vec18::zeros();
        row[6 + l.joint] = l.sign;
        rows.push(row);
    }
    let scaled: Vec<Vec18> = rows.iter().map(&apply_inv_mass).collect();
    let mut delassus = vec![0.0; n_rows * n_rows];
    for a in 0..n_rows {
        for b in a..n_rows {
            let w = rows[a].dot(&scaled[b]);
            delassus[a * n_rows + b] = w;
            delassus[b * n_rows + a] = w;
        }
    }
    let w_at = |a: usize, b: usize| delassus[a * n_rows + b];

    let mut lambda = vec![0.0; n_rows];
    let mut velocity: Vec<f64> = rows.iter().map(|g| g.dot(&free)).collect();
    let n_contact_rows = 3 * active.len();

    for _ in 0..MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        let mut scale: f64 = 1e-12;
        for (i, c) in active.iter().enumerate() {
            let base = 3 * i;
            let w_local = Matrix3::from_fn(|r, col| w_at(base + r, base + col));
            let current = Vector3::new(lambda[base], lambda[base + 1], lambda[base + 2]);
            let v_now = Vector3::new(velocity[base], velocity[base + 1], velocity[base + 2]);
            let v_others = v_now - dt * w_local * current;
            let f0 = Vector3::new(0.0, 0.0, k * c.depth);
            let system = Matrix3::identity() + dt * Matrix3::from_diagonal(&damping) * w_local;
            let stick = system
                .try_inverse()
                .map(|inv| inv * (f0 - damping.component_mul(&v_others)))
                .unwrap_or_else(Vector3::zeros);
            let t = stick.xy().norm();
            let f = if stick.z > 0.0 && t <= mu * stick.z {
                stick
            } else {
                // slide on the cone boundary opposing the stick direction
                let dir = if t > 0.0 {
                    stick.xy() / t
                } else {
                    -v_others.xy().try_normalize(1e-12).unwrap_or_else(|| nalgebra::Vector2::zeros())
                };
                let col = Vector3::new(mu * dir.x, mu * dir.y, 1.0);
                let denom = 1.0 + dt * damping.z * (w_local.row(2) * col)[0];
                let normal = (f0.z - damping.z * v_others.z) / denom.max(1.0);
                if normal > 0.0 {
                    normal * col
                } else {
                    Vector3::zeros()
                }
            };
            let delta = f - current;
            if delta.iter().any(|d| *d != 0.0) {
                for r in 0..3 {
                    lambda[base + r] = f[r];
                    let d = dt * delta[r];
                    for (row, vel) in velocity.iter_mut().enumerate() {
                        *vel += w_at(row, base + r) * d;
                    }
                }
            }
            max_change = max_change.max(delta.amax());
            scale = scale.max(f.amax());
        }
        for (li, l) in limits.iter().enumerate() {
            let row = n_contact_rows + li;
            let w = w_at(row, row);
            let updated = (lambda[row] + (l.min_rate - velocity[row]) / (dt * w)).max(0.0);
            let delta = updated - lambda[row];
            if delta != 0.0 {
                lambda[row] = updated;
                for (r, vel) in velocity.iter_mut().enumerate() {
                    *vel += w_at(r, row) * dt * delta;
                }
            }
            max_change = max_change.max(delta.abs());
            scale = scale.max(updated.abs());
        }
        if max_change <= SWEEP_TOLERANCE * scale {
            break;
        }
    }

    let mut generalized = Vec18::zeros();
    for (row, g) in rows.iter().enumerate() {
        generalized += g * lambda[row];
    }
    for (i, f) in forces.iter_mut().enumerate() {
        *f = Vector3::new(lambda[3 * i], lambda[3 * i + 1], lambda[3 * i + 2]);
    }
    for (li, l) in limits.iter().enumerate() {
        limited[l.joint] = lambda[n_contact_rows + li] > 0.0;
    }
    Ok(VelocitySolution { forces, limited, generalized })
}
