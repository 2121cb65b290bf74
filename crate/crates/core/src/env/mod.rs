//! The MDP layer: observations, cost terms, rewards, commands and episodes.

pub mod command;
pub mod cost;
pub mod observation;
pub mod task;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use command::{sample_command, Command};
pub use cost::{angle_diff, compute_cost_terms, kernel, task_reward, CostParams, CostVector, NUM_COSTS};
pub use observation::{
    build_estimator_input, build_observation, inject_noise, HeightSource, HistoryBuffer,
    NoiseConfig, ObservationLayout, Segment, SegmentKind, HISTORY_LEN, NUM_BEHAVIORS,
};
pub use task::{RewardWeights, Task, TaskKind};

use crate::actuator::{pd_torque, ActuatorConfig};
use crate::dynamics::{
    self, leg_frames, posture_to_joints, ContactReport, GeneralizedState, RobotModel,
    CONTROL_DECIMATION, NUM_JOINTS, SIM_DT, SITTING_POSTURE, STANCE_POSTURE,
};
use crate::error::{ensure_finite, Result};

pub const CONTROL_DT: f64 = SIM_DT * CONTROL_DECIMATION as f64;

/// Lowest contact point of the robot lifted to `clearance` above the ground.
pub fn place_on_ground(model: &RobotModel, state: &mut GeneralizedState, clearance: f64) {
    let frames = leg_frames(model, state);
    let rot = state.orientation();
    let lowest = dynamics::contact::ground_candidates(model, &frames)
        .iter()
        .map(|c| (rot * c.local).z - c.radius)
        .fold(f64::INFINITY, f64::min);
    state.q[2] = clearance - lowest;
}

fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-9 {
            return UnitQuaternion::new_normalize(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        }
    }
}

fn jittered<R: Rng + ?Sized>(posture: [f64; 3], amp: f64, rng: &mut R) -> [f64; NUM_JOINTS] {
    let mut joints = posture_to_joints(posture);
    for j in &mut joints {
        *j += rng.gen_range(-amp..=amp);
    }
    joints
}

/// Initial state for an episode of `kind`.
pub fn reset_state<R: Rng + ?Sized>(model: &RobotModel, kind: TaskKind, rng: &mut R) -> GeneralizedState {
    let yaw = UnitQuaternion::from_euler_angles(0.0, 0.0, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
    let (rot, joints, clearance) = match kind {
        TaskKind::Locomotion => (yaw, jittered(STANCE_POSTURE, 0.05, rng), 0.0),
        TaskKind::StandingUp => (yaw, jittered(SITTING_POSTURE, 0.1, rng), 0.0),
        TaskKind::SelfRighting => {
            let joints = std::array::from_fn(|j| {
                let [lo, hi] = model.joint_limit(j);
                rng.gen_range(lo..=hi)
            });
            (uniform_rotation(rng), joints, 0.02)
        }
        TaskKind::Selector => {
            let pick = TaskKind::BEHAVIORS[rng.gen_range(0..TaskKind::BEHAVIORS.len())];
            return reset_state(model, pick, rng);
        }
    };
    let mut state = GeneralizedState::new(Vector3::zeros(), rot, joints);
    for (j, q) in state.joint_angles_mut().iter_mut().enumerate() {
        let [lo, hi] = model.joint_limit(j);
        *q = q.clamp(lo, hi);
    }
    place_on_ground(model, &mut state, clearance);
    state
}

/// Episode end caused by the state itself (not the time limit).
pub fn is_terminal(task: &Task, state: &GeneralizedState, contacts: &ContactReport) -> bool {
    if !state.is_finite() {
        return true;
    }
    task.kind == TaskKind::Locomotion && base_touches_ground(contacts)
}

/// Base box corners (ids 8-15) in ground contact.
pub fn base_touches_ground(contacts: &ContactReport) -> bool {
    contacts.ground_contacts().any(|c| (8..16).contains(&c.point_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(default)]
    pub model: RobotModel,
    #[serde(default)]
    pub actuator: ActuatorConfig,
    pub task: Task,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default = "default_history")]
    pub history_len: usize,
}

fn default_history() -> usize {
    HISTORY_LEN
}

impl EnvConfig {
    pub fn new(kind: TaskKind) -> Self {
        EnvConfig {
            model: RobotModel::default(),
            actuator: ActuatorConfig::default(),
            task: Task::new(kind),
            noise: NoiseConfig::default(),
            history_len: HISTORY_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.actuator.validate()?;
        self.task.validate()?;
        self.noise.validate()
    }
}

/// Result of one control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub costs: CostVector,
    /// Episode ended by the state (falls, divergence).
    pub terminal: bool,
    /// Episode ended by the time limit.
    pub truncated: bool,
    /// Torques of the last simulation substep.
    pub torques: [f64; NUM_JOINTS],
    /// Largest |torque| over all substeps.
    pub max_abs_torque: f64,
    pub contacts: ContactReport,
}

/// Everything the cost terms of one control step were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub state: GeneralizedState,
    pub contacts: ContactReport,
    pub torques: [f64; NUM_JOINTS],
    pub history: HistoryBuffer,
    pub action: [f64; NUM_JOINTS],
    pub command: Command,
}

/// One simulated robot running a task at the control rate.
pub struct Env {
    pub config: EnvConfig,
    state: GeneralizedState,
    history: HistoryBuffer,
    command: Command,
    steps: usize,
    rng: ChaCha8Rng,
    params: CostParams,
    last_record: Option<CostRecord>,
}

impl Env {
    pub fn new(config: EnvConfig, rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let params = CostParams::for_task(&config.task, CONTROL_DT);
        let history = HistoryBuffer::new(config.history_len, config.task.kind.action_reference());
        let state = GeneralizedState::new(
            Vector3::zeros(),
            UnitQuaternion::identity(),
            config.task.kind.action_reference(),
        );
        let mut env = Env {
            config,
            state,
            history,
            command: Command::zero(),
            steps: 0,
            rng,
            params,
            last_record: None,
        };
        env.reset();
        Ok(env)
    }

    pub fn reseed(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    pub fn reset(&mut self) {
        let kind = self.config.task.kind;
        self.state = reset_state(&self.config.model, kind, &mut self.rng);
        let joints: [f64; NUM_JOINTS] = std::array::from_fn(|j| self.state.q[7 + j]);
        self.history = HistoryBuffer::new(self.config.history_len, joints);
        self.command = if kind.uses_height() {
            sample_command(&mut self.rng)
        } else {
            Command::zero()
        };
        self.steps = 0;
        self.last_record = None;
    }

    pub fn state(&self) -> &GeneralizedState {
        &self.state
    }

    pub fn set_state(&mut self, state: GeneralizedState) {
        self.state = state;
    }

    pub fn history(&self) -> &HistoryBuffer {
        &self.history
    }

    pub fn command(&self) -> &Command {
        &self.command
    }

    pub fn set_command(&mut self, command: Command) {
        self.command = command;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn cost_params(&self) -> &CostParams {
        &self.params
    }

    /// Inputs of the most recent cost evaluation.
    pub fn last_record(&self) -> Option<&CostRecord> {
        self.last_record.as_ref()
    }

    /// Noisy observation in the layout of `kind`.
    pub fn observe(
        &mut self,
        kind: TaskKind,
        height: HeightSource,
        prev_selector_action: Option<&[f64; NUM_BEHAVIORS]>,
    ) -> Result<Vec<f64>> {
        let mut obs = build_observation(kind, &self.state, &self.history, &self.command, height, prev_selector_action)?;
        let layout = ObservationLayout::for_task(kind, self.config.history_len);
        inject_noise(&mut obs, &layout, &self.config.noise, &mut self.rng)?;
        Ok(obs)
    }

    /// Noise-free height-estimator input.
    pub fn estimator_input(&self) -> Result<Vec<f64>> {
        build_estimator_input(&self.state, &self.history)
    }

    /// Height-estimator input with the same observation noise as the
    /// policies see.
    pub fn estimator_observation(&mut self) -> Result<Vec<f64>> {
        let mut obs = build_estimator_input(&self.state, &self.history)?;
        let layout = ObservationLayout::height_estimator(self.config.history_len);
        inject_noise(&mut obs, &layout, &self.config.noise, &mut self.rng)?;
        Ok(obs)
    }

    /// Holds the joint targets for one control period.
    pub fn step(&mut self, target: &[f64; NUM_JOINTS]) -> Result<StepOutcome> {
        ensure_finite("joint targets", target)?;
        let mut torques = [0.0; NUM_JOINTS];
        let mut max_abs_torque: f64 = 0.0;
        let mut report = ContactReport::default();
        for _ in 0..CONTROL_DECIMATION {
            torques = pd_torque(&self.config.actuator, target, &self.state)?;
            max_abs_torque = torques.iter().fold(max_abs_torque, |m, t| m.max(t.abs()));
            let (next, r) = dynamics::step(&self.config.model, &self.state, &torques, SIM_DT)?;
            self.state = next;
            report = r;
        }
        let costs = compute_cost_terms(
            &self.config.model,
            &self.state,
            &report,
            &torques,
            &self.history,
            target,
            &self.command,
            &self.params,
        )?;
        let reward = task_reward(&self.config.task.reward_weights, &costs);
        self.last_record = Some(CostRecord {
            state: self.state.clone(),
            contacts: report.clone(),
            torques,
            history: self.history.clone(),
            action: *target,
            command: self.command,
        });
        self.history.push(target, &self.state);
        self.steps += 1;
        Ok(StepOutcome {
            reward,
            costs,
            terminal: is_terminal(&self.config.task, &self.state, &report),
            truncated: self.steps >= self.config.task.episode_length,
            torques,
            max_abs_torque,
            contacts: report,
        })
    }
}
