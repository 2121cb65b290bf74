//! Forward kinematics of the three-joint leg chains.

use nalgebra::{Matrix3, Rotation3, Vector3};

use super::model::{RobotModel, NUM_LEGS};
use super::state::GeneralizedState;

/// Knee and foot positions of one leg in the base frame, with their
/// Jacobians with respect to the leg's (HAA, HFE, KFE) angles.
#[derive(Debug, Clone, Copy)]
pub struct LegFrame {
    pub knee: Vector3<f64>,
    pub foot: Vector3<f64>,
    pub knee_jacobian: Matrix3<f64>,
    pub foot_jacobian: Matrix3<f64>,
}

pub fn leg_frame(model: &RobotModel, leg: usize, angles: &[f64]) -> LegFrame {
    let [l_hip, l_thigh, l_shank] = model.link_lengths;
    let hip = Vector3::from(model.hip_offsets[leg]);
    let side = model.leg_side(leg);

    let haa = Rotation3::from_axis_angle(&Vector3::x_axis(), angles[0]);
    let hfe_rot = haa * Rotation3::from_axis_angle(&Vector3::y_axis(), angles[1]);
    let kfe_rot = hfe_rot * Rotation3::from_axis_angle(&Vector3::y_axis(), angles[2]);

    let hfe_origin = hip + haa * Vector3::new(0.0, side * l_hip, 0.0);
    let knee = hfe_origin + hfe_rot * Vector3::new(0.0, 0.0, -l_thigh);
    let foot = knee + kfe_rot * Vector3::new(0.0, 0.0, -l_shank);

    let haa_axis = Vector3::x();
    let pitch_axis = haa * Vector3::y();

    let knee_jacobian = Matrix3::from_columns(&[
        haa_axis.cross(&(knee - hip)),
        pitch_axis.cross(&(knee - hfe_origin)),
        Vector3::zeros(),
    ]);
    let foot_jacobian = Matrix3::from_columns(&[
        haa_axis.cross(&(foot - hip)),
        pitch_axis.cross(&(foot - hfe_origin)),
        pitch_axis.cross(&(foot - knee)),
    ]);

    LegFrame {
        knee,
        foot,
        knee_jacobian,
        foot_jacobian,
    }
}

pub fn leg_frames(model: &RobotModel, state: &GeneralizedState) -> [LegFrame; NUM_LEGS] {
    let joints = state.joint_angles();
    std::array::from_fn(|leg| leg_frame(model, leg, &joints[3 * leg..3 * leg + 3]))
}

/// World velocity of a base-frame point `r` moving with base-frame velocity
/// `r_dot` relative to the base.
pub(crate) fn point_velocity(
    state: &GeneralizedState,
    r: &Vector3<f64>,
    r_dot: &Vector3<f64>,
) -> Vector3<f64> {
    let v = state.base_linear_velocity();
    let w = state.base_angular_velocity();
    state.orientation() * (v + w.cross(r) + r_dot)
}

/// World-frame foot positions and velocities for all four legs.
pub fn foot_kinematics(
    model: &RobotModel,
    state: &GeneralizedState,
) -> ([Vector3<f64>; NUM_LEGS], [Vector3<f64>; NUM_LEGS]) {
    let frames = leg_frames(model, state);
    let rot = state.orientation();
    let base = state.base_position();
    let joint_vel = state.joint_velocities();
    let positions = std::array::from_fn(|leg| base + rot * frames[leg].foot);
    let velocities = std::array::from_fn(|leg| {
        let qd = Vector3::from_column_slice(&joint_vel[3 * leg..3 * leg + 3]);
        point_velocity(state, &frames[leg].foot, &(frames[leg].foot_jacobian * qd))
    });
    (positions, velocities)
}

/// Base-origin height for a level base whose feet all rest on flat ground
/// with the given per-leg posture.
pub fn stance_height(model: &RobotModel, posture: [f64; 3]) -> f64 {
    (0..NUM_LEGS)
        .map(|leg| -leg_frame(model, leg, &posture).foot.z)
        .fold(f64::NEG_INFINITY, f64::max)
        + model.foot_radius
}
