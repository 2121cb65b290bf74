//! Observation vectors and their segment layout.
//!
//! Segment order per task (N_h = history length):
//!
//! | task            | segments                                                        |
//! |-----------------|-----------------------------------------------------------------|
//! | self-righting   | gravity 3, angular vel 3, joint pos 12, joint vel 12, history N_h*24, prev target 12 |
//! | standing up     | linear vel 3, then the self-righting segments                   |
//! | locomotion      | standing-up segments, command 3, height 1                       |
//! | selector        | locomotion segments, previous selector action 3                 |
//! | height estimator| gravity 3, joint pos 12, joint vel 12, history N_h*24           |
//!
//! History entries are newest first, each (position error 12, velocity 12).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::command::Command;
use super::task::TaskKind;
use crate::dynamics::{gravity_in_body, GeneralizedState, NUM_JOINTS};
use crate::error::{Error, Result};

pub const HISTORY_LEN: usize = 2;
pub const NUM_BEHAVIORS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryBuffer {
    capacity: usize,
    /// Newest first.
    entries: std::collections::VecDeque<([f64; NUM_JOINTS], [f64; NUM_JOINTS])>,
    prev_target: [f64; NUM_JOINTS],
}

impl HistoryBuffer {
    /// Zero-filled history. `prev_target` is the joint target held before
    /// the first action.
    pub fn new(capacity: usize, prev_target: [f64; NUM_JOINTS]) -> Self {
        HistoryBuffer {
            capacity,
            entries: std::iter::repeat(([0.0; NUM_JOINTS], [0.0; NUM_JOINTS]))
                .take(capacity)
                .collect(),
            prev_target,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Records the joint state reached under `target`.
    pub fn push(&mut self, target: &[f64; NUM_JOINTS], state: &GeneralizedState) {
        let q = state.joint_angles();
        let qd = state.joint_velocities();
        let error = std::array::from_fn(|j| target[j] - q[j]);
        let vel = std::array::from_fn(|j| qd[j]);
        if self.capacity > 0 {
            self.entries.pop_back();
            self.entries.push_front((error, vel));
        }
        self.prev_target = *target;
    }

    pub fn prev_target(&self) -> &[f64; NUM_JOINTS] {
        &self.prev_target
    }

    /// Joint velocity recorded at the previous control step (zero after a
    /// reset).
    pub fn last_velocity(&self) -> [f64; NUM_JOINTS] {
        self.entries.front().map_or([0.0; NUM_JOINTS], |e| e.1)
    }

    fn extend_into(&self, out: &mut Vec<f64>) {
        for (err, vel) in &self.entries {
            out.extend_from_slice(err);
            out.extend_from_slice(vel);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    LinearVelocity,
    Gravity,
    AngularVelocity,
    JointPosition,
    JointVelocity,
    History,
    PrevTarget,
    Command,
    Height,
    SelectorAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub name: String,
    pub segments: Vec<Segment>,
    pub len: usize,
}

impl ObservationLayout {
    fn from_parts(name: &str, parts: &[(SegmentKind, usize)]) -> Self {
        let mut offset = 0;
        let segments = parts
            .iter()
            .map(|&(kind, len)| {
                let s = Segment { kind, offset, len };
                offset += len;
                s
            })
            .collect();
        ObservationLayout {
            name: name.to_string(),
            segments,
            len: offset,
        }
    }

    pub fn for_task(kind: TaskKind, history_len: usize) -> Self {
        use SegmentKind::*;
        let mut parts = Vec::new();
        if kind != TaskKind::SelfRighting {
            parts.push((LinearVelocity, 3));
        }
        parts.extend([
            (Gravity, 3),
            (AngularVelocity, 3),
            (JointPosition, NUM_JOINTS),
            (JointVelocity, NUM_JOINTS),
            (History, history_len * 2 * NUM_JOINTS),
            (PrevTarget, NUM_JOINTS),
        ]);
        if kind.uses_height() {
            parts.extend([(Command, 3), (Height, 1)]);
        }
        if kind == TaskKind::Selector {
            parts.push((SelectorAction, NUM_BEHAVIORS));
        }
        Self::from_parts(kind.name(), &parts)
    }

    pub fn height_estimator(history_len: usize) -> Self {
        use SegmentKind::*;
        Self::from_parts(
            "height_estimator",
            &[
                (Gravity, 3),
                (JointPosition, NUM_JOINTS),
                (JointVelocity, NUM_JOINTS),
                (History, history_len * 2 * NUM_JOINTS),
            ],
        )
    }

    pub fn segment(&self, kind: SegmentKind) -> Option<&Segment> {
        self.segments.iter().find(|s| s.kind == kind)
    }

    /// All task layouts plus the height-estimator input.
    pub fn manifest(history_len: usize) -> Vec<ObservationLayout> {
        let mut all: Vec<_> = TaskKind::ALL
            .iter()
            .map(|&k| Self::for_task(k, history_len))
            .collect();
        all.push(Self::height_estimator(history_len));
        all
    }
}

impl ObservationLayout {
    /// Fixed per-entry factors that bring raw observations to roughly unit
    /// scale before they enter a network. Joint velocities (also inside the
    /// history) are divided by 10, body rates by 4, linear velocities by 2.
    pub fn input_scale(&self) -> Vec<f64> {
        let mut scale = vec![1.0; self.len];
        for seg in &self.segments {
            let range = seg.offset..seg.offset + seg.len;
            match seg.kind {
                SegmentKind::LinearVelocity => scale[range].fill(0.5),
                SegmentKind::AngularVelocity => scale[range].fill(0.25),
                SegmentKind::JointVelocity => scale[range].fill(0.1),
                SegmentKind::History => {
                    for (k, s) in scale[range].iter_mut().enumerate() {
                        if (k / NUM_JOINTS) % 2 == 1 {
                            *s = 0.1;
                        }
                    }
                }
                SegmentKind::Height => scale[range].fill(2.0),
                _ => {}
            }
        }
        scale
    }
}

/// Which base height a locomotion-type observation carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeightSource {
    None,
    True,
    Estimated(f64),
}

pub fn build_observation(
    kind: TaskKind,
    state: &GeneralizedState,
    history: &HistoryBuffer,
    command: &Command,
    height: HeightSource,
    prev_selector_action: Option<&[f64; NUM_BEHAVIORS]>,
) -> Result<Vec<f64>> {
    let h = match (kind.uses_height(), height) {
        (false, HeightSource::None) => None,
        (true, HeightSource::True) => Some(state.q[2]),
        (true, HeightSource::Estimated(h)) => Some(h),
        (needs, got) => {
            return Err(Error::InvalidArgument(format!(
                "{kind} observation {} a height, got {got:?}",
                if needs { "needs" } else { "takes no" }
            )))
        }
    };
    let onehot = match (kind == TaskKind::Selector, prev_selector_action) {
        (true, Some(a)) => Some(a),
        (false, None) => None,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "previous selector action given for {kind} observation mismatch"
            )))
        }
    };

    let mut obs = Vec::with_capacity(100);
    if kind != TaskKind::SelfRighting {
        obs.extend_from_slice(&state.u[..3]);
    }
    obs.extend_from_slice(gravity_in_body(state).as_slice());
    obs.extend_from_slice(&state.u[3..6]);
    obs.extend_from_slice(state.joint_angles());
    obs.extend_from_slice(state.joint_velocities());
    history.extend_into(&mut obs);
    obs.extend_from_slice(history.prev_target());
    if let Some(h) = h {
        obs.extend_from_slice(&command.as_array());
        obs.push(h);
    }
    if let Some(a) = onehot {
        obs.extend_from_slice(a);
    }
    debug_assert_eq!(obs.len(), ObservationLayout::for_task(kind, history.capacity()).len);
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{kind} observation")));
    }
    Ok(obs)
}

pub fn build_estimator_input(state: &GeneralizedState, history: &HistoryBuffer) -> Result<Vec<f64>> {
    let mut obs = Vec::with_capacity(75);
    obs.extend_from_slice(gravity_in_body(state).as_slice());
    obs.extend_from_slice(state.joint_angles());
    obs.extend_from_slice(state.joint_velocities());
    history.extend_into(&mut obs);
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("height estimator input".into()));
    }
    Ok(obs)
}

/// Half-widths of the uniform observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub linear_velocity: f64,
    pub angular_velocity: f64,
    pub joint_velocity: f64,
    pub joint_position: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            linear_velocity: 0.2,
            angular_velocity: 0.25,
            joint_velocity: 0.5,
            joint_position: 0.05,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        NoiseConfig {
            linear_velocity: 0.0,
            angular_velocity: 0.0,
            joint_velocity: 0.0,
            joint_position: 0.0,
        }
    }

    fn amplitude(&self, kind: SegmentKind) -> f64 {
        match kind {
            SegmentKind::LinearVelocity => self.linear_velocity,
            SegmentKind::AngularVelocity => self.angular_velocity,
            SegmentKind::JointVelocity => self.joint_velocity,
            SegmentKind::JointPosition => self.joint_position,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.linear_velocity,
            self.angular_velocity,
            self.joint_velocity,
            self.joint_position,
        ];
        if all.iter().all(|a| a.is_finite() && *a >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config("noise amplitudes must be finite and >= 0".into()))
        }
    }
}

/// Adds zero-mean uniform noise to the velocity and joint-position segments.
pub fn inject_noise<R: Rng + ?Sized>(
    obs: &mut [f64],
    layout: &ObservationLayout,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<()> {
    if obs.len() != layout.len {
        return Err(Error::DimensionMismatch {
            what: "observation",
            expected: layout.len,
            got: obs.len(),
        });
    }
    for seg in &layout.segments {
        let amp = noise.amplitude(seg.kind);
        if amp > 0.0 {
            for v in &mut obs[seg.offset..seg.offset + seg.len] {
                *v += rng.gen_range(-amp..=amp);
            }
        }
    }
    Ok(())
}
