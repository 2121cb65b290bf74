use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::command::Command;
use super::observation::HistoryBuffer;
use super::task::{RewardWeights, Task};
use crate::dynamics::{gravity_in_body, ContactReport, GeneralizedState, RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::error::{ensure_len, Error, Result};

/// Base height below which the height cost fires.
pub const HEIGHT_THRESHOLD: f64 = 0.35;
/// Desired swing-foot height for the clearance cost.
pub const FOOT_CLEARANCE_HEIGHT: f64 = 0.07;

/// Smallest absolute difference between two angles, in [0, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Logistic kernel `-1 / (e^{a|x|} + 2 + e^{-a|x|})`, in [-1/4, 0).
pub fn kernel(x: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("kernel alpha must be > 0, got {alpha}")));
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    // divided through by e^{z} to stay finite for large z
    let e = (-alpha * norm).exp();
    Ok(-e / ((1.0 + e) * (1.0 + e)))
}

pub const NUM_COSTS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostVector {
    pub angular_velocity: f64,
    pub linear_velocity: f64,
    pub height: f64,
    pub joint_position: f64,
    pub orientation: f64,
    pub torque: f64,
    pub power: f64,
    pub joint_acceleration: f64,
    pub joint_speed: f64,
    pub body_impulse: f64,
    pub body_slippage: f64,
    pub foot_slippage: f64,
    pub foot_clearance: f64,
    pub self_collision: f64,
    pub action_difference: f64,
}

impl CostVector {
    pub const NAMES: [&'static str; NUM_COSTS] = [
        "angular_velocity",
        "linear_velocity",
        "height",
        "joint_position",
        "orientation",
        "torque",
        "power",
        "joint_acceleration",
        "joint_speed",
        "body_impulse",
        "body_slippage",
        "foot_slippage",
        "foot_clearance",
        "self_collision",
        "action_difference",
    ];

    pub fn as_array(&self) -> [f64; NUM_COSTS] {
        [
            self.angular_velocity,
            self.linear_velocity,
            self.height,
            self.joint_position,
            self.orientation,
            self.torque,
            self.power,
            self.joint_acceleration,
            self.joint_speed,
            self.body_impulse,
            self.body_slippage,
            self.foot_slippage,
            self.foot_clearance,
            self.self_collision,
            self.action_difference,
        ]
    }

    pub fn tracking(&self) -> f64 {
        self.angular_velocity + self.linear_velocity
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Task-dependent constants of the cost terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub joint_reference: [f64; NUM_JOINTS],
    pub alpha_angular: f64,
    pub alpha_linear: f64,
    /// Control period used to difference joint velocities.
    pub control_dt: f64,
}

impl CostParams {
    pub fn for_task(task: &Task, control_dt: f64) -> Self {
        CostParams {
            joint_reference: task.kind.joint_reference(),
            alpha_angular: task.alpha_angular,
            alpha_linear: task.alpha_linear,
            control_dt,
        }
    }
}

/// All fifteen cost terms for one control step.
///
/// `history` must not yet contain this step: its previous target is
/// `a_{t-1}` and its newest velocity is the previous step's joint velocity.
#[allow(clippy::too_many_arguments)]
pub fn compute_cost_terms(
    model: &RobotModel,
    state: &GeneralizedState,
    contacts: &ContactReport,
    torques: &[f64],
    history: &HistoryBuffer,
    action: &[f64],
    command: &Command,
    params: &CostParams,
) -> Result<CostVector> {
    ensure_len("torques", NUM_JOINTS, torques.len())?;
    ensure_len("action", NUM_JOINTS, action.len())?;
    if !(params.control_dt > 0.0) {
        return Err(Error::InvalidArgument("control_dt must be > 0".into()));
    }

    let omega = state.base_angular_velocity();
    let v = state.base_linear_velocity();
    let omega_err = omega - Vector3::new(0.0, 0.0, command.yaw_rate);
    let v_err = v - Vector3::new(command.vx, command.vy, 0.0);

    let q = state.joint_angles();
    let qd = state.joint_velocities();
    let prev_qd = history.last_velocity();
    let prev_action = history.prev_target();

    let joint_position = q
        .iter()
        .zip(&params.joint_reference)
        .map(|(a, b)| angle_diff(*a, *b))
        .sum();
    let orientation = (Vector3::new(0.0, 0.0, -1.0) - gravity_in_body(state)).norm();
    let torque = torques.iter().map(|t| t * t).sum();
    let power = qd.iter().zip(torques).map(|(w, t)| (w * t).max(0.0)).sum();
    let joint_acceleration = qd
        .iter()
        .zip(&prev_qd)
        .map(|(a, b)| ((a - b) / params.control_dt).powi(2))
        .sum();
    let joint_speed = qd
        .iter()
        .map(|w| (w.abs() - model.joint_speed_limit).max(0.0).powi(2))
        .sum();

    let ground: Vec<_> = contacts.ground_contacts().collect();
    let body: Vec<_> = ground
        .iter()
        .filter(|c| c.class != crate::dynamics::ContactClass::Foot)
        .collect();
    let body_impulse = if body.is_empty() {
        0.0
    } else {
        body.iter().map(|c| c.impulse().norm()).sum::<f64>() / body.len() as f64
    };
    let body_slippage = if ground.is_empty() {
        0.0
    } else {
        ground.iter().map(|c| c.velocity().norm_squared()).sum::<f64>() / ground.len() as f64
    };

    let mut foot_slippage = 0.0;
    let mut foot_clearance = 0.0;
    for leg in 0..NUM_LEGS {
        let speed = Vector3::from(contacts.foot_velocities[leg]).norm();
        if contacts.foot_gap(leg) == 0.0 {
            foot_slippage += speed;
        } else {
            foot_clearance += (contacts.foot_positions[leg][2] - FOOT_CLEARANCE_HEIGHT).powi(2) * speed;
        }
    }

    let action_difference = prev_action.iter().zip(action).map(|(a, b)| (a - b).powi(2)).sum();

    let costs = CostVector {
        angular_velocity: kernel(omega_err.as_slice(), params.alpha_angular)?,
        linear_velocity: kernel(v_err.as_slice(), params.alpha_linear)?,
        height: if state.q[2] < HEIGHT_THRESHOLD { 1.0 } else { 0.0 },
        joint_position,
        orientation,
        torque,
        power,
        joint_acceleration,
        joint_speed,
        body_impulse,
        body_slippage,
        foot_slippage,
        foot_clearance,
        self_collision: contacts.self_contacts().count() as f64,
        action_difference,
    };
    if !costs.is_finite() {
        return Err(Error::NonFinite("cost terms".into()));
    }
    Ok(costs)
}

/// `sum(weight * term)`.
pub fn task_reward(weights: &RewardWeights, costs: &CostVector) -> f64 {
    weights
        .as_cost_vector()
        .as_array()
        .iter()
        .zip(costs.as_array())
        .map(|(w, c)| w * c)
        .sum()
}
