//! Deterministic evaluation of a checkpoint with per-step trajectory logs.
//!
//! A trajectory file is JSON lines: one header object followed by one
//! record per control step.
//!
//! Header fields: `schema`, `version`, `checkpoint`, `episode`, `seed`,
//! `stress`, `steps`, `control_dt`, `task` (kind, weights, episode length,
//! kernel alphas) and `model`.
//!
//! Record fields: `step`, `time`, `reward`, `costs` (the fifteen terms by
//! name), `terminal`, `max_abs_torque`, `behavior` (selector runs),
//! `contact_summary` and the cost inputs `state` (`q`, `u`, `time`),
//! `contacts`, `torques`, `history`, `action` (joint targets) and `command`.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{ContactClass, RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::env::{
    Command, CostRecord, CostVector, Env, EnvConfig, HeightSource, ObservationLayout, Task, TaskKind, CONTROL_DT,
    NUM_BEHAVIORS,
};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Mlp, Policy, StoredNet};
use crate::ppo::rollout::{joint_targets, scale_input};
use crate::ppo::TrainSetup;
use crate::selector::{height_estimate, one_hot_index, select_behavior, BehaviorLibrary, SelectorSetup};
use crate::seeding::rng_for;

pub const TRAJECTORY_SCHEMA: &str = "quadrl-trajectory";
pub const TRAJECTORY_VERSION: u32 = 1;
pub const SUMMARY_FILE: &str = "summary.json";
pub const STREAM_EVAL: u64 = 6;

/// Forward speed of the stress test, above the training command range.
pub const STRESS_SPEED: f64 = 1.6;
/// Stress-test duration in control steps (10 s).
pub const STRESS_STEPS: usize = 1000;

/// Where an evaluation takes its environment and nets from.
pub enum EvalSetup {
    Behavior(TrainSetup),
    Selector(SelectorSetup),
}

impl EvalSetup {
    pub fn env(&self) -> &EnvConfig {
        match self {
            EvalSetup::Behavior(s) => &s.env,
            EvalSetup::Selector(s) => &s.env,
        }
    }

    fn env_mut(&mut self) -> &mut EnvConfig {
        match self {
            EvalSetup::Behavior(s) => &mut s.env,
            EvalSetup::Selector(s) => &mut s.env,
        }
    }

    /// The setup a checkpoint was trained with, from its sidecar.
    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let meta = Checkpoint::load_metadata(path)?;
        let setup = meta
            .get("setup")
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("{}: sidecar has no setup", path.display())))?;
        match meta.get("kind").and_then(|k| k.as_str()) {
            Some("behavior") => Ok(EvalSetup::Behavior(serde_json::from_value(setup)?)),
            Some("selector") => Ok(EvalSetup::Selector(serde_json::from_value(setup)?)),
            other => Err(Error::Checkpoint(format!("{}: unknown checkpoint kind {other:?}", path.display()))),
        }
    }
}

enum Agent {
    Behavior {
        policy: Policy,
        scale: Vec<f64>,
    },
    Selector {
        selector: Policy,
        estimator: Mlp,
        library: BehaviorLibrary,
        decision_period: usize,
        scale: Vec<f64>,
    },
}

fn stored_policy(ckpt: &Checkpoint, name: &str, path: &Path) -> Result<Policy> {
    match ckpt.net(name).map(|r| &r.net) {
        Some(StoredNet::Policy(p)) => Ok(p.clone()),
        _ => Err(Error::Checkpoint(format!("{}: no policy record '{name}'", path.display()))),
    }
}

fn check_layout(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!(
            "{what} expects {got} observation entries but the task layout has {expected}"
        )))
    }
}

impl Agent {
    fn load(path: &Path, setup: &EvalSetup) -> Result<Self> {
        let meta = Checkpoint::load_metadata(path)?;
        let task = meta.get("task").and_then(|t| t.as_str()).unwrap_or("");
        let kind = setup.env().task.kind;
        if task != kind.name() {
            return Err(Error::Checkpoint(format!(
                "{}: checkpoint was trained for '{task}', config asks for '{kind}'",
                path.display()
            )));
        }
        let ckpt = Checkpoint::load(path)?;
        let layout = ObservationLayout::for_task(kind, setup.env().history_len);
        match setup {
            EvalSetup::Behavior(_) => {
                let policy = stored_policy(&ckpt, "policy", path)?;
                check_layout("policy", layout.len, policy.obs_dim())?;
                if policy.action_dim() != NUM_JOINTS {
                    return Err(Error::Checkpoint("behavior policy must output 12 joint offsets".into()));
                }
                Ok(Agent::Behavior {
                    policy,
                    scale: layout.input_scale(),
                })
            }
            EvalSetup::Selector(s) => {
                let selector = stored_policy(&ckpt, "selector", path)?;
                check_layout("selector", layout.len, selector.obs_dim())?;
                let estimator = match ckpt.net("estimator").map(|r| &r.net) {
                    Some(StoredNet::Regressor(m)) => m.clone(),
                    _ => return Err(Error::Checkpoint(format!("{}: no estimator record", path.display()))),
                };
                check_layout(
                    "estimator",
                    ObservationLayout::height_estimator(s.env.history_len).len,
                    estimator.input_dim(),
                )?;
                Ok(Agent::Selector {
                    selector,
                    estimator,
                    library: s.library()?,
                    decision_period: s.selector.decision_period,
                    scale: layout.input_scale(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactSummary {
    pub feet_in_contact: [bool; NUM_LEGS],
    pub body_ground_contacts: usize,
    pub self_collisions: usize,
    pub max_penetration: f64,
}

impl ContactSummary {
    pub fn from_record(record: &CostRecord) -> Self {
        let c = &record.contacts;
        ContactSummary {
            feet_in_contact: std::array::from_fn(|leg| c.foot_gap(leg) == 0.0),
            body_ground_contacts: c.ground_contacts().filter(|k| k.class == ContactClass::Body).count(),
            self_collisions: c.self_contacts().count(),
            max_penetration: c.max_penetration(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub schema: String,
    pub version: u32,
    pub checkpoint: PathBuf,
    pub episode: usize,
    pub seed: u64,
    pub stress: bool,
    pub steps: usize,
    pub control_dt: f64,
    pub task: Task,
    pub model: RobotModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub reward: f64,
    pub costs: CostVector,
    pub terminal: bool,
    pub max_abs_torque: f64,
    pub behavior: Option<usize>,
    pub contact_summary: ContactSummary,
    #[serde(flatten)]
    pub inputs: CostRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub header: TrajectoryHeader,
    pub records: Vec<StepRecord>,
}

impl TrajectoryLog {
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut line = |v: String| writeln!(out, "{v}").map_err(|e| Error::io(path, e));
        line(serde_json::to_string(&self.header)?)?;
        for r in &self.records {
            line(serde_json::to_string(r)?)?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Parses a log, rejecting foreign schemas, other versions and logs whose
    /// record count disagrees with the header.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::LogFormat("empty trajectory log".into()))?;
        let probe: serde_json::Value = serde_json::from_str(first)
            .map_err(|e| Error::LogFormat(format!("line 1: {e}")))?;
        let schema = probe.get("schema").and_then(|s| s.as_str());
        if schema != Some(TRAJECTORY_SCHEMA) {
            return Err(Error::LogFormat(format!("not a trajectory log (schema {schema:?})")));
        }
        let version = probe.get("version").and_then(|v| v.as_u64());
        if version != Some(u64::from(TRAJECTORY_VERSION)) {
            return Err(Error::LogFormat(format!(
                "trajectory schema version {version:?} is not supported (expected {TRAJECTORY_VERSION})"
            )));
        }
        let header: TrajectoryHeader =
            serde_json::from_value(probe).map_err(|e| Error::LogFormat(format!("line 1: {e}")))?;
        let records = lines
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::LogFormat(format!("line {}: {e}", n + 1))))
            .collect::<Result<Vec<StepRecord>>>()?;
        if records.len() != header.steps {
            return Err(Error::LogFormat(format!(
                "header announces {} steps but the log has {}",
                header.steps,
                records.len()
            )));
        }
        Ok(TrajectoryLog { header, records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::LogFormat(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violations {
    /// Steps where some joint torque reached the actuator limit.
    pub torque_limit_steps: usize,
    /// Steps where some joint exceeded the joint speed limit.
    pub joint_speed_steps: usize,
    /// Steps with base or knee ground contact.
    pub body_contact_steps: usize,
    /// Steps with leg-leg collisions.
    pub self_collision_steps: usize,
}

impl Violations {
    fn add(&mut self, other: &Violations) {
        self.torque_limit_steps += other.torque_limit_steps;
        self.joint_speed_steps += other.joint_speed_steps;
        self.body_contact_steps += other.body_contact_steps;
        self.self_collision_steps += other.self_collision_steps;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub steps: usize,
    pub sim_time: f64,
    pub command: Command,
    pub mean_reward: f64,
    /// Mean |v_xy - command_xy| in the body frame, m/s.
    pub linear_tracking_error: f64,
    /// Mean |yaw rate - commanded yaw rate|, rad/s.
    pub yaw_tracking_error: f64,
    pub terminated: bool,
    pub max_abs_torque: f64,
    pub violations: Violations,
    pub behavior_usage: Option<[usize; NUM_BEHAVIORS]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub checkpoint: PathBuf,
    pub task: TaskKind,
    pub seed: u64,
    pub stress: bool,
    pub episodes: Vec<EpisodeSummary>,
    pub mean_reward: f64,
    pub linear_tracking_error: f64,
    pub yaw_tracking_error: f64,
    pub terminations: usize,
    pub max_abs_torque: f64,
    pub violations: Violations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub episodes: usize,
    pub seed: u64,
    /// Hold a fixed 1.6 m/s forward command for exactly 1000 control steps,
    /// ignoring falls.
    pub stress: bool,
}

/// Runs `options.episodes` deterministic episodes and returns the summary
/// together with one trajectory log per episode.
pub fn evaluate(checkpoint: &Path, mut setup: EvalSetup, options: &EvalOptions) -> Result<(EvalSummary, Vec<TrajectoryLog>)> {
    if options.episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be > 0".into()));
    }
    let kind = setup.env().task.kind;
    if options.stress {
        if !kind.uses_height() {
            return Err(Error::InvalidArgument(format!("the stress test needs a commanded task, not {kind}")));
        }
        setup.env_mut().task.episode_length = STRESS_STEPS;
    }
    setup.env().validate()?;
    let agent = Agent::load(checkpoint, &setup)?;
    let env_config = setup.env().clone();

    let mut episodes = Vec::new();
    let mut logs = Vec::new();
    for episode in 0..options.episodes {
        let mut env = Env::new(env_config.clone(), rng_for(&[options.seed, STREAM_EVAL, episode as u64]))?;
        if options.stress {
            env.set_command(Command::forward(STRESS_SPEED));
        }
        let (summary, records) = run_episode(&agent, &mut env, episode, options.stress)?;
        logs.push(TrajectoryLog {
            header: TrajectoryHeader {
                schema: TRAJECTORY_SCHEMA.to_string(),
                version: TRAJECTORY_VERSION,
                checkpoint: checkpoint.to_path_buf(),
                episode,
                seed: options.seed,
                stress: options.stress,
                steps: records.len(),
                control_dt: CONTROL_DT,
                task: env_config.task.clone(),
                model: env_config.model.clone(),
            },
            records,
        });
        episodes.push(summary);
    }

    let n = episodes.len() as f64;
    let mut violations = Violations::default();
    episodes.iter().for_each(|e| violations.add(&e.violations));
    let summary = EvalSummary {
        checkpoint: checkpoint.to_path_buf(),
        task: kind,
        seed: options.seed,
        stress: options.stress,
        mean_reward: episodes.iter().map(|e| e.mean_reward).sum::<f64>() / n,
        linear_tracking_error: episodes.iter().map(|e| e.linear_tracking_error).sum::<f64>() / n,
        yaw_tracking_error: episodes.iter().map(|e| e.yaw_tracking_error).sum::<f64>() / n,
        terminations: episodes.iter().filter(|e| e.terminated).count(),
        max_abs_torque: episodes.iter().fold(0.0, |m, e| m.max(e.max_abs_torque)),
        violations,
        episodes,
    };
    Ok((summary, logs))
}

fn run_episode(agent: &Agent, env: &mut Env, episode: usize, stress: bool) -> Result<(EpisodeSummary, Vec<StepRecord>)> {
    let torque_limit = env.config.actuator.torque_limit.min(env.config.model.torque_limit);
    let speed_limit = env.config.model.joint_speed_limit;
    let history_len = env.config.history_len;
    let command = *env.command();
    let mut records = Vec::new();
    let mut violations = Violations::default();
    let mut usage = [0usize; NUM_BEHAVIORS];
    let mut prev_choice = [0.0; NUM_BEHAVIORS];
    let mut current = 0usize;
    let (mut reward, mut lin_err, mut yaw_err, mut max_torque) = (0.0, 0.0, 0.0, 0.0f64);
    let mut terminated = false;

    loop {
        let step = env.steps();
        let (targets, behavior) = match agent {
            Agent::Behavior { policy, scale } => {
                let kind = env.config.task.kind;
                let height = if kind.uses_height() { HeightSource::True } else { HeightSource::None };
                let mut obs = env.observe(kind, height, None)?;
                scale_input(&mut obs, scale);
                (joint_targets(kind, &policy.deterministic_action(&obs)?)?, None)
            }
            Agent::Selector {
                selector,
                estimator,
                library,
                decision_period,
                scale,
            } => {
                let est_obs = env.estimator_observation()?;
                let height = HeightSource::Estimated(height_estimate(estimator, &est_obs, history_len)?);
                if step % decision_period == 0 {
                    let mut obs = env.observe(TaskKind::Selector, height, Some(&prev_choice))?;
                    scale_input(&mut obs, scale);
                    prev_choice = select_behavior::<rand_chacha::ChaCha8Rng>(selector, &obs, None)?;
                    current = one_hot_index(&prev_choice)?;
                    usage[current] += 1;
                }
                (library.targets(current, env, height)?, Some(current))
            }
        };
        let out = env.step(&targets)?;
        let inputs = env
            .last_record()
            .cloned()
            .ok_or_else(|| Error::InvalidArgument("env did not record cost inputs".into()))?;
        let state = &inputs.state;
        lin_err += (state.u[0] - command.vx).hypot(state.u[1] - command.vy);
        yaw_err += (state.u[5] - command.yaw_rate).abs();
        reward += out.reward;
        max_torque = max_torque.max(out.max_abs_torque);
        let summary = ContactSummary::from_record(&inputs);
        violations.torque_limit_steps += usize::from(out.max_abs_torque >= torque_limit - 1e-9);
        violations.joint_speed_steps += usize::from(state.joint_velocities().iter().any(|v| v.abs() > speed_limit));
        violations.body_contact_steps += usize::from(summary.body_ground_contacts > 0);
        violations.self_collision_steps += usize::from(summary.self_collisions > 0);
        records.push(StepRecord {
            step,
            time: (step + 1) as f64 * CONTROL_DT,
            reward: out.reward,
            costs: out.costs,
            terminal: out.terminal,
            max_abs_torque: out.max_abs_torque,
            behavior,
            contact_summary: summary,
            inputs,
        });
        terminated |= out.terminal;
        if out.truncated || (out.terminal && !stress) {
            break;
        }
    }

    let n = records.len() as f64;
    let summary = EpisodeSummary {
        episode,
        steps: records.len(),
        sim_time: n * CONTROL_DT,
        command,
        mean_reward: reward / n,
        linear_tracking_error: lin_err / n,
        yaw_tracking_error: yaw_err / n,
        terminated,
        max_abs_torque: max_torque,
        violations,
        behavior_usage: matches!(agent, Agent::Selector { .. }).then_some(usage),
    };
    Ok((summary, records))
}

/// Trajectory file name of an episode.
pub fn trajectory_path(out_dir: &Path, episode: usize) -> PathBuf {
    out_dir.join(format!("episode_{episode:03}.jsonl"))
}

/// Writes the summary and all trajectory logs under `out_dir`.
pub fn write_eval(out_dir: &Path, summary: &EvalSummary, logs: &[TrajectoryLog]) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for log in logs {
        log.write(&trajectory_path(out_dir, log.header.episode))?;
    }
    let path = out_dir.join(SUMMARY_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(summary)?).map_err(|e| Error::io(&path, e))
}
