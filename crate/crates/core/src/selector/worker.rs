use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::library::BehaviorLibrary;
use super::memory::ReplayPair;
use super::{height_estimate, one_hot_index};
use crate::env::{Env, HeightSource, ObservationLayout, TaskKind, NUM_BEHAVIORS, NUM_COSTS};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::ppo::rollout::{scale_input, RolloutWorker, WorkerStep};

/// Runs the selector task: each decision executes one behavior for a
/// decision period. Height pairs are buffered locally and drained by the
/// trainer between collection phases.
pub struct SelectorWorker {
    pub env: Env,
    library: Arc<BehaviorLibrary>,
    estimator: Arc<Mlp>,
    use_estimate: bool,
    decision_period: usize,
    prev_action: [f64; NUM_BEHAVIORS],
    scale: Vec<f64>,
    pairs: Vec<ReplayPair>,
    usage: [usize; NUM_BEHAVIORS],
    /// Sum of |fed height - true height| and the number of control steps.
    fed_error: (f64, usize),
}

impl SelectorWorker {
    pub fn new(env: Env, library: Arc<BehaviorLibrary>, estimator: Arc<Mlp>, decision_period: usize) -> Result<Self> {
        if env.config.task.kind != TaskKind::Selector {
            return Err(Error::InvalidArgument("selector worker needs the selector task".into()));
        }
        if library.history_len != env.config.history_len {
            return Err(Error::InvalidArgument("behavior library and env disagree on history length".into()));
        }
        let scale = ObservationLayout::for_task(TaskKind::Selector, env.config.history_len).input_scale();
        Ok(SelectorWorker {
            env,
            library,
            estimator,
            use_estimate: false,
            decision_period,
            prev_action: [0.0; NUM_BEHAVIORS],
            scale,
            pairs: Vec::new(),
            usage: [0; NUM_BEHAVIORS],
            fed_error: (0.0, 0),
        })
    }

    /// Sets the estimator snapshot and whether it replaces the true height.
    pub fn configure(&mut self, estimator: Arc<Mlp>, use_estimate: bool) {
        self.estimator = estimator;
        self.use_estimate = use_estimate;
    }

    pub fn take_pairs(&mut self) -> Vec<ReplayPair> {
        std::mem::take(&mut self.pairs)
    }

    pub fn take_usage(&mut self) -> [usize; NUM_BEHAVIORS] {
        std::mem::take(&mut self.usage)
    }

    /// Accumulated |fed - true| height error and control-step count.
    pub fn take_fed_error(&mut self) -> (f64, usize) {
        std::mem::take(&mut self.fed_error)
    }

    /// Height source for the current state; records the replay pair when
    /// `record` is set.
    fn height(&mut self, record: bool) -> Result<HeightSource> {
        let obs = self.env.estimator_observation()?;
        let truth = self.env.state().q[2];
        let source = if self.use_estimate {
            HeightSource::Estimated(height_estimate(&self.estimator, &obs, self.env.config.history_len)?)
        } else {
            HeightSource::True
        };
        if record {
            if let HeightSource::Estimated(h) = source {
                self.fed_error.0 += (h - truth).abs();
            }
            self.fed_error.1 += 1;
            self.pairs.push(ReplayPair { observation: obs, height: truth });
        }
        Ok(source)
    }
}

impl RolloutWorker for SelectorWorker {
    fn reseed(&mut self, rng: ChaCha8Rng) {
        self.env.reseed(rng);
    }

    fn reset(&mut self) -> Result<()> {
        self.env.reset();
        self.prev_action = [0.0; NUM_BEHAVIORS];
        Ok(())
    }

    fn observe(&mut self) -> Result<Vec<f64>> {
        let height = self.height(false)?;
        let prev = self.prev_action;
        let mut obs = self.env.observe(TaskKind::Selector, height, Some(&prev))?;
        scale_input(&mut obs, &self.scale);
        Ok(obs)
    }

    fn act(&mut self, action: &[f64]) -> Result<WorkerStep> {
        let index = one_hot_index(action)?;
        self.usage[index] += 1;
        let library = Arc::clone(&self.library);
        let mut out = WorkerStep {
            reward: 0.0,
            terminal: false,
            truncated: false,
            tracking_cost: 0.0,
            costs: [0.0; NUM_COSTS],
            max_abs_torque: 0.0,
        };
        let mut steps = 0;
        for _ in 0..self.decision_period {
            let height = self.height(true)?;
            let targets = library.targets(index, &mut self.env, height)?;
            let s = self.env.step(&targets)?;
            steps += 1;
            out.reward += s.reward;
            out.tracking_cost += s.costs.tracking();
            for (acc, c) in out.costs.iter_mut().zip(s.costs.as_array()) {
                *acc += c;
            }
            out.max_abs_torque = out.max_abs_torque.max(s.max_abs_torque);
            out.terminal = s.terminal;
            out.truncated = s.truncated;
            if s.terminal || s.truncated {
                break;
            }
        }
        let inv = 1.0 / steps as f64;
        out.reward *= inv;
        out.tracking_cost *= inv;
        out.costs.iter_mut().for_each(|c| *c *= inv);
        self.prev_action = std::array::from_fn(|i| action[i]);
        Ok(out)
    }

    fn rng(&mut self) -> &mut ChaCha8Rng {
        self.env.rng()
    }
}
