//! The three frozen behaviors the selector chooses from.

use std::path::{Path, PathBuf};

use crate::dynamics::{posture_to_joints, NUM_JOINTS, SITTING_POSTURE, STANCE_POSTURE};
use crate::env::{Env, HeightSource, ObservationLayout, TaskKind, NUM_BEHAVIORS};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Policy, StoredNet};
use crate::ppo::rollout::{joint_targets, scale_input};

#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    /// Deterministic (zero-variance) action of a trained policy.
    Policy(Policy),
    /// Constant joint targets, for harnesses that do not need learned
    /// behaviors.
    Scripted([f64; NUM_JOINTS]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Behavior {
    pub kind: TaskKind,
    pub controller: Controller,
    scale: Vec<f64>,
}

impl Behavior {
    pub fn new(kind: TaskKind, controller: Controller, history_len: usize) -> Result<Self> {
        if kind == TaskKind::Selector {
            return Err(Error::InvalidArgument("the selector is not a behavior".into()));
        }
        let layout = ObservationLayout::for_task(kind, history_len);
        if let Controller::Policy(p) = &controller {
            if p.obs_dim() != layout.len || p.action_dim() != NUM_JOINTS || !matches!(p, Policy::Gaussian(_)) {
                return Err(Error::Checkpoint(format!(
                    "{kind} behavior needs a Gaussian policy {} -> {NUM_JOINTS}, got {} -> {}",
                    layout.len,
                    p.obs_dim(),
                    p.action_dim()
                )));
            }
            // smoke forward pass
            let out = p.deterministic_action(&vec![0.0; layout.len])?;
            crate::error::ensure_finite("behavior smoke output", &out)?;
        }
        Ok(Behavior { kind, controller, scale: layout.input_scale() })
    }
}

/// Behaviors indexed like the selector's one-hot action: self-righting,
/// standing up, locomotion.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorLibrary {
    pub behaviors: Vec<Behavior>,
    pub history_len: usize,
}

impl BehaviorLibrary {
    pub fn new(behaviors: Vec<Behavior>, history_len: usize) -> Result<Self> {
        let kinds: Vec<TaskKind> = behaviors.iter().map(|b| b.kind).collect();
        if kinds != TaskKind::BEHAVIORS {
            return Err(Error::InvalidArgument(format!(
                "behavior library must hold {:?} in order, got {kinds:?}",
                TaskKind::BEHAVIORS
            )));
        }
        Ok(BehaviorLibrary { behaviors, history_len })
    }

    /// Constant-posture stand-ins: sit, stand, stand.
    pub fn scripted(history_len: usize) -> Result<Self> {
        let sit = posture_to_joints(SITTING_POSTURE);
        let stand = posture_to_joints(STANCE_POSTURE);
        let behaviors = [sit, stand, stand]
            .into_iter()
            .zip(TaskKind::BEHAVIORS)
            .map(|(t, kind)| Behavior::new(kind, Controller::Scripted(t), history_len))
            .collect::<Result<Vec<_>>>()?;
        Self::new(behaviors, history_len)
    }

    /// Loads the `policy` record of each behavior checkpoint and checks that
    /// the sidecar names the expected task.
    pub fn load(paths: &[PathBuf; NUM_BEHAVIORS], history_len: usize) -> Result<Self> {
        let behaviors = paths
            .iter()
            .zip(TaskKind::BEHAVIORS)
            .map(|(path, kind)| {
                let policy = load_behavior_policy(path, kind)?;
                Behavior::new(kind, Controller::Policy(policy), history_len)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(behaviors, history_len)
    }

    /// Joint targets chosen by behavior `index` for the env's current state.
    pub fn targets(&self, index: usize, env: &mut Env, height: HeightSource) -> Result<[f64; NUM_JOINTS]> {
        let b = self
            .behaviors
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("behavior index {index}")))?;
        match &b.controller {
            Controller::Scripted(t) => Ok(*t),
            Controller::Policy(p) => {
                let h = if b.kind.uses_height() { height } else { HeightSource::None };
                let mut obs = env.observe(b.kind, h, None)?;
                scale_input(&mut obs, &b.scale);
                joint_targets(b.kind, &p.deterministic_action(&obs)?)
            }
        }
    }

    /// All behavior parameters, concatenated.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in &self.behaviors {
            match &b.controller {
                Controller::Policy(p) => out.extend(p.flat_params()),
                Controller::Scripted(t) => out.extend_from_slice(t),
            }
        }
        out
    }
}

pub fn load_behavior_policy(path: &Path, kind: TaskKind) -> Result<Policy> {
    let meta = Checkpoint::load_metadata(path)?;
    let task = meta.get("task").and_then(|t| t.as_str()).unwrap_or("");
    if task != kind.name() {
        return Err(Error::Checkpoint(format!(
            "{}: expected a {} checkpoint, sidecar says '{task}'",
            path.display(),
            kind.name()
        )));
    }
    let ckpt = Checkpoint::load(path)?;
    match ckpt.net("policy").map(|r| &r.net) {
        Some(StoredNet::Policy(p)) => Ok(p.clone()),
        _ => Err(Error::Checkpoint(format!("{}: no policy record", path.display()))),
    }
}
