use serde::{Deserialize, Serialize};

use super::cost::CostVector;
use crate::dynamics::{posture_to_joints, NUM_JOINTS, SITTING_POSTURE, STANCE_POSTURE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SelfRighting,
    StandingUp,
    Locomotion,
    Selector,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::SelfRighting,
        TaskKind::StandingUp,
        TaskKind::Locomotion,
        TaskKind::Selector,
    ];

    /// Behaviors the selector chooses between, in one-hot order.
    pub const BEHAVIORS: [TaskKind; 3] = [
        TaskKind::SelfRighting,
        TaskKind::StandingUp,
        TaskKind::Locomotion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SelfRighting => "self_righting",
            TaskKind::StandingUp => "standing_up",
            TaskKind::Locomotion => "locomotion",
            TaskKind::Selector => "selector",
        }
    }

    pub fn uses_height(self) -> bool {
        matches!(self, TaskKind::Locomotion | TaskKind::Selector)
    }

    /// Posture that a zero policy action maps to.
    pub fn action_reference(self) -> [f64; NUM_JOINTS] {
        match self {
            TaskKind::SelfRighting | TaskKind::StandingUp => posture_to_joints(SITTING_POSTURE),
            TaskKind::Locomotion | TaskKind::Selector => posture_to_joints(STANCE_POSTURE),
        }
    }

    /// Target posture of the joint-position cost.
    pub fn joint_reference(self) -> [f64; NUM_JOINTS] {
        match self {
            TaskKind::SelfRighting => posture_to_joints(SITTING_POSTURE),
            _ => posture_to_joints(STANCE_POSTURE),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown task '{s}'")))
    }
}

/// Per-term reward weights. Every term must be given; the reward is
/// `sum(weight * term)`, so penalties and kernel tracking terms both carry
/// negative weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
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

impl RewardWeights {
    pub fn as_cost_vector(&self) -> CostVector {
        CostVector {
            angular_velocity: self.angular_velocity,
            linear_velocity: self.linear_velocity,
            height: self.height,
            joint_position: self.joint_position,
            orientation: self.orientation,
            torque: self.torque,
            power: self.power,
            joint_acceleration: self.joint_acceleration,
            joint_speed: self.joint_speed,
            body_impulse: self.body_impulse,
            body_slippage: self.body_slippage,
            foot_slippage: self.foot_slippage,
            foot_clearance: self.foot_clearance,
            self_collision: self.self_collision,
            action_difference: self.action_difference,
        }
    }

    /// Shipped defaults. These are tuned for the default robot model, not
    /// taken from any reference controller.
    pub fn defaults_for(kind: TaskKind) -> Self {
        let shared = RewardWeights {
            angular_velocity: -1.0,
            linear_velocity: -2.0,
            height: 0.0,
            joint_position: 0.0,
            orientation: 0.0,
            torque: -2e-5,
            power: -1e-4,
            joint_acceleration: -1e-7,
            joint_speed: -0.01,
            body_impulse: -0.2,
            body_slippage: -0.05,
            foot_slippage: -0.05,
            foot_clearance: -1.0,
            self_collision: -0.1,
            action_difference: -0.2,
        };
        match kind {
            TaskKind::Locomotion | TaskKind::Selector => RewardWeights {
                angular_velocity: -4.0,
                linear_velocity: -8.0,
                height: -1.0,
                joint_position: -0.01,
                orientation: -0.5,
                ..shared
            },
            TaskKind::StandingUp => RewardWeights {
                angular_velocity: -4.0,
                linear_velocity: -8.0,
                height: -1.0,
                joint_position: -0.05,
                orientation: -1.0,
                foot_clearance: 0.0,
                action_difference: -0.05,
                ..shared
            },
            TaskKind::SelfRighting => RewardWeights {
                orientation: -1.0,
                joint_position: -0.03,
                foot_clearance: 0.0,
                body_impulse: 0.0,
                ..shared
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_cost_vector().as_array().iter().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("reward weights must be finite".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub kind: TaskKind,
    pub reward_weights: RewardWeights,
    /// Control steps per episode.
    pub episode_length: usize,
    #[serde(default = "default_alpha")]
    pub alpha_angular: f64,
    #[serde(default = "default_alpha")]
    pub alpha_linear: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl Task {
    pub fn new(kind: TaskKind) -> Self {
        Task {
            kind,
            reward_weights: RewardWeights::defaults_for(kind),
            episode_length: 400,
            alpha_angular: default_alpha(),
            alpha_linear: default_alpha(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reward_weights.validate()?;
        if self.episode_length == 0 {
            return Err(Error::Config("episode_length must be > 0".into()));
        }
        if !(self.alpha_angular > 0.0 && self.alpha_linear > 0.0)
            || !self.alpha_angular.is_finite()
            || !self.alpha_linear.is_finite()
        {
            return Err(Error::Config("kernel alphas must be finite and > 0".into()));
        }
        Ok(())
    }
}
