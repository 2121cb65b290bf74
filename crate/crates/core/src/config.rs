//! Run configuration: one strict TOML file describing a training run.
//!
//! ```toml
//! task = "standing_up"          # self_righting | standing_up | locomotion | selector
//! seed = 7
//! out_dir = "runs/standing_up"  # optional
//! workers = 1                   # optional, rollout threads
//! behaviors = ["sr.bin", "su.bin", "loco.bin"]  # selector only; omitted = scripted
//!
//! [env]
//! episode_length = 400
//! history_len = 2
//! alpha_angular = 1.0
//! alpha_linear = 1.0
//!
//! [reward_weights]   # optional; if present, all 15 terms are required
//! [model]            # robot model keys
//! [actuator]         # kp, kd, torque_limit
//! [noise]            # uniform observation noise half-widths
//! [ppo]              # PPO hyper-parameters and network sizes
//! [selector]         # selector and height-estimator settings
//! ```
//!
//! Unknown keys anywhere are rejected. Relative behavior paths are resolved
//! against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actuator::ActuatorConfig;
use crate::dynamics::RobotModel;
use crate::env::{EnvConfig, NoiseConfig, RewardWeights, Task, TaskKind, HISTORY_LEN, NUM_BEHAVIORS};
use crate::error::{Error, Result};
use crate::ppo::{PpoConfig, TrainSetup};
use crate::selector::train::BehaviorSource;
use crate::selector::{SelectorConfig, SelectorSetup};

/// Overrides the root that relative output directories are placed under.
pub const OUT_ROOT_ENV: &str = "QUADRL_OUT_ROOT";
pub const SNAPSHOT_FILE: &str = "config.toml";
pub const LAYOUT_FILE: &str = "layout.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSection {
    pub episode_length: usize,
    pub history_len: usize,
    pub alpha_angular: f64,
    pub alpha_linear: f64,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        EpisodeSection {
            episode_length: 400,
            history_len: HISTORY_LEN,
            alpha_angular: 1.0,
            alpha_linear: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behaviors: Option<[PathBuf; NUM_BEHAVIORS]>,
    #[serde(default)]
    pub env: EpisodeSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_weights: Option<RewardWeights>,
    #[serde(default)]
    pub model: RobotModel,
    #[serde(default)]
    pub actuator: ActuatorConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub selector: SelectorConfig,
}

impl RunConfig {
    pub fn new(task: TaskKind) -> Self {
        RunConfig {
            task,
            seed: 0,
            out_dir: None,
            workers: None,
            behaviors: None,
            env: EpisodeSection::default(),
            reward_weights: None,
            model: RobotModel::default(),
            actuator: ActuatorConfig::default(),
            noise: NoiseConfig::default(),
            ppo: PpoConfig::default(),
            selector: SelectorConfig::default(),
        }
    }

    /// Parses and validates. Syntax and key errors carry line and column.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let Some(paths) = &mut config.behaviors {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in paths.iter_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.env_config().validate()?;
        self.ppo.validate()?;
        if self.env.history_len == 0 {
            return Err(Error::Config("env.history_len must be > 0".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be > 0".into()));
        }
        if self.task == TaskKind::Selector {
            self.selector.validate()?;
        } else if self.behaviors.is_some() {
            return Err(Error::Config("behaviors is only used by the selector task".into()));
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            model: self.model.clone(),
            actuator: self.actuator,
            task: Task {
                kind: self.task,
                reward_weights: self.reward_weights.unwrap_or_else(|| RewardWeights::defaults_for(self.task)),
                episode_length: self.env.episode_length,
                alpha_angular: self.env.alpha_angular,
                alpha_linear: self.env.alpha_linear,
            },
            noise: self.noise,
            history_len: self.env.history_len,
        }
    }

    pub fn train_setup(&self) -> Result<TrainSetup> {
        let setup = TrainSetup {
            env: self.env_config(),
            ppo: self.ppo.clone(),
            seed: self.seed,
        };
        setup.validate()?;
        Ok(setup)
    }

    pub fn selector_setup(&self) -> Result<SelectorSetup> {
        let setup = SelectorSetup {
            env: self.env_config(),
            ppo: self.ppo.clone(),
            selector: self.selector.clone(),
            behaviors: match &self.behaviors {
                Some(paths) => BehaviorSource::Checkpoints(paths.clone()),
                None => BehaviorSource::Scripted,
            },
            seed: self.seed,
        };
        setup.validate()?;
        Ok(setup)
    }

    /// Output directory: an explicit path wins, then `out_dir`, then
    /// `runs/<task>-seed<seed>`. Relative results go under `root` when given.
    pub fn output_dir(&self, explicit: Option<&Path>, root: Option<&Path>) -> PathBuf {
        let dir = match (explicit, &self.out_dir) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => p.clone(),
            (None, None) => PathBuf::from(format!("runs/{}-seed{}", self.task, self.seed)),
        };
        match root {
            Some(root) if dir.is_relative() && explicit.is_none() => root.join(dir),
            _ => dir,
        }
    }

    /// A copy with defaults spelled out, suitable for re-running the run.
    pub fn snapshot(&self) -> RunConfig {
        let mut snap = self.clone();
        snap.reward_weights = Some(self.env_config().task.reward_weights);
        snap
    }
}
