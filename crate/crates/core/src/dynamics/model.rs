//! Robot description: masses, geometry, limits and contact parameters.
//!
//! The model is loadable from a flat TOML key-value file. Every key is
//! optional and falls back to the default quadruped below; unknown keys are
//! rejected.
//!
//! ```toml
//! base_mass = 16.0                  # kg
//! base_inertia = [[0.28, 0.0, 0.0], [0.0, 0.96, 0.0], [0.0, 0.0, 1.13]]  # kg m^2, body frame
//! base_half_extents = [0.35, 0.15, 0.08]  # m, collision box
//! link_masses = [2.0, 1.0, 0.5]     # kg, hip / thigh / shank
//! link_lengths = [0.08, 0.35, 0.35] # m, hip lateral offset / thigh / shank
//! hip_offsets = [[0.3, 0.1, 0.0], [0.3, -0.1, 0.0], [-0.3, 0.1, 0.0], [-0.3, -0.1, 0.0]]
//! joint_limits = [[-0.8, 0.8], [-2.6, 2.6], [-2.8, 0.3]]  # rad, HAA / HFE / KFE, shared by all legs
//! joint_armature = 0.05             # kg m^2 reflected rotor inertia
//! joint_speed_limit = 12.0          # rad/s
//! torque_limit = 40.0               # N m
//! friction_coeff = 0.8
//! contact_stiffness = 2.0e5         # N/m
//! contact_damping = 2.0e3           # N s/m, normal
//! tangential_damping = 1.0e4        # N s/m, friction regularisation
//! foot_radius = 0.03                # m
//! knee_radius = 0.04                # m
//! gravity = 9.81                    # m/s^2
//! ```
//!
//! Legs are ordered LF, RF, LH, RH. Each leg is a HAA (about base x), HFE and
//! KFE (both about the rotated y axis) chain.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotModel {
    pub base_mass: f64,
    pub base_inertia: [[f64; 3]; 3],
    pub base_half_extents: [f64; 3],
    pub link_masses: [f64; 3],
    pub link_lengths: [f64; 3],
    pub hip_offsets: [[f64; 3]; NUM_LEGS],
    pub joint_limits: [[f64; 2]; 3],
    pub joint_armature: f64,
    pub joint_speed_limit: f64,
    pub torque_limit: f64,
    pub friction_coeff: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub tangential_damping: f64,
    pub foot_radius: f64,
    pub knee_radius: f64,
    pub gravity: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        let base_mass = 16.0;
        let half = [0.35, 0.15, 0.08];
        let box_inertia = |a: f64, b: f64| base_mass / 3.0 * (a * a + b * b);
        RobotModel {
            base_mass,
            base_inertia: [
                [box_inertia(half[1], half[2]), 0.0, 0.0],
                [0.0, box_inertia(half[0], half[2]), 0.0],
                [0.0, 0.0, box_inertia(half[0], half[1])],
            ],
            base_half_extents: half,
            link_masses: [2.0, 1.0, 0.5],
            link_lengths: [0.08, 0.35, 0.35],
            hip_offsets: [
                [0.3, 0.1, 0.0],
                [0.3, -0.1, 0.0],
                [-0.3, 0.1, 0.0],
                [-0.3, -0.1, 0.0],
            ],
            joint_limits: [[-0.8, 0.8], [-2.6, 2.6], [-2.8, 0.3]],
            joint_armature: 0.05,
            joint_speed_limit: 12.0,
            torque_limit: 40.0,
            friction_coeff: 0.8,
            contact_stiffness: 2.0e5,
            contact_damping: 2.0e3,
            tangential_damping: 1.0e4,
            foot_radius: 0.03,
            knee_radius: 0.04,
            gravity: 9.81,
        }
    }
}

impl RobotModel {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let model: RobotModel =
            toml::from_str(text).map_err(|e| Error::Config(format!("robot model: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("robot model: {msg}")));
        let all_finite = [
            self.base_mass,
            self.joint_armature,
            self.joint_speed_limit,
            self.torque_limit,
            self.friction_coeff,
            self.contact_stiffness,
            self.contact_damping,
            self.tangential_damping,
            self.foot_radius,
            self.knee_radius,
            self.gravity,
        ]
        .iter()
        .chain(self.base_inertia.iter().flatten())
        .chain(self.base_half_extents.iter())
        .chain(self.link_masses.iter())
        .chain(self.link_lengths.iter())
        .chain(self.hip_offsets.iter().flatten())
        .chain(self.joint_limits.iter().flatten())
        .all(|v| v.is_finite());
        if !all_finite {
            return bad("non-finite parameter");
        }
        if self.base_mass <= 0.0 || self.link_masses.iter().any(|&m| m <= 0.0) {
            return bad("all masses must be > 0");
        }
        let inertia = self.base_inertia_matrix();
        if (inertia - inertia.transpose()).abs().max() > 1e-12 {
            return bad("base_inertia must be symmetric");
        }
        if inertia.cholesky().is_none() {
            return bad("base_inertia must be positive definite");
        }
        if self.joint_limits.iter().any(|[lo, hi]| lo >= hi) {
            return bad("joint_limits need lo < hi");
        }
        if self.link_lengths.iter().any(|&l| l <= 0.0)
            || self.base_half_extents.iter().any(|&l| l <= 0.0)
        {
            return bad("lengths must be > 0");
        }
        if self.joint_armature <= 0.0
            || self.joint_speed_limit <= 0.0
            || self.torque_limit <= 0.0
            || self.friction_coeff < 0.0
            || self.contact_stiffness <= 0.0
            || self.contact_damping < 0.0
            || self.tangential_damping < 0.0
            || self.foot_radius < 0.0
            || self.knee_radius < 0.0
            || self.gravity < 0.0
        {
            return bad("physical parameter out of range");
        }
        Ok(())
    }

    pub fn leg_mass(&self) -> f64 {
        self.link_masses.iter().sum()
    }

    /// Base plus the lumped leg point masses.
    pub fn total_mass(&self) -> f64 {
        self.base_mass + NUM_LEGS as f64 * self.leg_mass()
    }

    pub fn base_inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.base_inertia[r][c])
    }

    /// Base inertia with each leg's mass lumped as a point mass at its hip.
    pub fn lumped_inertia(&self) -> Matrix3<f64> {
        let mut inertia = self.base_inertia_matrix();
        for hip in &self.hip_offsets {
            let r = Vector3::from(*hip);
            inertia += self.leg_mass() * (Matrix3::identity() * r.norm_squared() - r * r.transpose());
        }
        inertia
    }

    /// Constant reflected inertia seen by each joint of a leg (HAA, HFE, KFE),
    /// from the link point masses at their mid-link distances.
    pub fn joint_inertias(&self) -> [f64; 3] {
        let [m_hip, m_thigh, m_shank] = self.link_masses;
        let [l_hip, l_thigh, l_shank] = self.link_lengths;
        let leg_len = l_thigh + l_shank;
        let kfe = m_shank * (0.5 * l_shank).powi(2);
        let hfe = m_thigh * (0.5 * l_thigh).powi(2) + m_shank * l_thigh.powi(2);
        let haa = m_hip * (0.5 * l_hip).powi(2) + (m_thigh + m_shank) * (0.5 * leg_len).powi(2);
        [
            haa + self.joint_armature,
            hfe + self.joint_armature,
            kfe + self.joint_armature,
        ]
    }

    pub fn joint_limit(&self, joint: usize) -> [f64; 2] {
        self.joint_limits[joint % 3]
    }

    /// +1 for left legs (positive hip y), -1 for right legs.
    pub fn leg_side(&self, leg: usize) -> f64 {
        if self.hip_offsets[leg][1] >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Nominal standing posture per leg (HAA, HFE, KFE).
pub const STANCE_POSTURE: [f64; 3] = [0.0, 0.4, -0.8];
/// Folded posture with all feet on the ground, base low.
pub const SITTING_POSTURE: [f64; 3] = [0.0, 1.3, -2.6];

pub fn posture_to_joints(leg: [f64; 3]) -> [f64; NUM_JOINTS] {
    let mut joints = [0.0; NUM_JOINTS];
    for chunk in joints.chunks_mut(3) {
        chunk.copy_from_slice(&leg);
    }
    joints
}
