use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::kinematics::LegFrame;
use super::model::{RobotModel, NUM_LEGS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactClass {
    Foot,
    Body,
    #[serde(rename = "self")]
    SelfCollision,
}

/// One candidate contact point. Ground candidates are always listed; a
/// positive `gap` means separated, zero means in contact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub point_id: usize,
    pub class: ContactClass,
    pub gap: f64,
    /// Depth below the ground surface when active, 0 otherwise.
    pub penetration: f64,
    pub impulse: [f64; 3],
    pub velocity: [f64; 3],
}

impl Contact {
    pub fn is_active(&self) -> bool {
        self.gap == 0.0
    }

    pub fn impulse(&self) -> Vector3<f64> {
        Vector3::from(self.impulse)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::from(self.velocity)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactReport {
    pub contacts: Vec<Contact>,
    pub foot_positions: [[f64; 3]; NUM_LEGS],
    pub foot_velocities: [[f64; 3]; NUM_LEGS],
}

impl ContactReport {
    /// Active ground contacts (the set I_c).
    pub fn ground_contacts(&self) -> impl Iterator<Item = &Contact> {
        self.contacts
            .iter()
            .filter(|c| c.class != ContactClass::SelfCollision && c.is_active())
    }

    /// Active foot contacts (I_c,f).
    pub fn foot_contacts(&self) -> impl Iterator<Item = &Contact> {
        self.ground_contacts().filter(|c| c.class == ContactClass::Foot)
    }

    /// Self-collision contacts (I_c,in).
    pub fn self_contacts(&self) -> impl Iterator<Item = &Contact> {
        self.contacts
            .iter()
            .filter(|c| c.class == ContactClass::SelfCollision)
    }

    /// Gap of the foot candidate for `leg`.
    pub fn foot_gap(&self, leg: usize) -> f64 {
        self.contacts
            .iter()
            .find(|c| c.class == ContactClass::Foot && c.point_id == leg)
            .map_or(f64::INFINITY, |c| c.gap)
    }

    pub fn max_penetration(&self) -> f64 {
        self.contacts
            .iter()
            .map(|c| c.penetration)
            .fold(0.0, f64::max)
    }

    pub fn max_foot_penetration(&self) -> f64 {
        self.contacts
            .iter()
            .filter(|c| c.class == ContactClass::Foot)
            .map(|c| c.penetration)
            .fold(0.0, f64::max)
    }
}

/// A ground-contact candidate in the base frame.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    pub point_id: usize,
    pub class: ContactClass,
    pub local: Vector3<f64>,
    pub radius: f64,
    /// Leg whose joints move this point, with the 3x3 Jacobian.
    pub leg: Option<(usize, nalgebra::Matrix3<f64>)>,
}

/// Feet (ids 0-3), knees (4-7), base box corners (8-15).
pub(crate) fn ground_candidates(model: &RobotModel, frames: &[LegFrame; NUM_LEGS]) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(16);
    for (leg, f) in frames.iter().enumerate() {
        out.push(Candidate {
            point_id: leg,
            class: ContactClass::Foot,
            local: f.foot,
            radius: model.foot_radius,
            leg: Some((leg, f.foot_jacobian)),
        });
    }
    for (leg, f) in frames.iter().enumerate() {
        out.push(Candidate {
            point_id: NUM_LEGS + leg,
            class: ContactClass::Body,
            local: f.knee,
            radius: model.knee_radius,
            leg: Some((leg, f.knee_jacobian)),
        });
    }
    let [hx, hy, hz] = model.base_half_extents;
    for corner in 0..8 {
        let sx = if corner & 1 == 0 { 1.0 } else { -1.0 };
        let sy = if corner & 2 == 0 { 1.0 } else { -1.0 };
        let sz = if corner & 4 == 0 { 1.0 } else { -1.0 };
        out.push(Candidate {
            point_id: 2 * NUM_LEGS + corner,
            class: ContactClass::Body,
            local: Vector3::new(sx * hx, sy * hy, sz * hz),
            radius: 0.0,
            leg: None,
        });
    }
    out
}

/// Pairs of legs that sit next to each other.
const ADJACENT_LEGS: [(usize, usize); 4] = [(0, 1), (2, 3), (0, 2), (1, 3)];

/// Self-collision proxies: knee/foot spheres of adjacent legs and feet
/// entering the base box. Ids start at 16.
pub(crate) fn self_collisions(model: &RobotModel, frames: &[LegFrame; NUM_LEGS]) -> Vec<Contact> {
    let mut out = Vec::new();
    let mut id = 16;
    let spheres = |leg: usize| {
        [
            (frames[leg].knee, model.knee_radius),
            (frames[leg].foot, model.foot_radius),
        ]
    };
    let hit = |id: usize| Contact {
        point_id: id,
        class: ContactClass::SelfCollision,
        gap: 0.0,
        penetration: 0.0,
        impulse: [0.0; 3],
        velocity: [0.0; 3],
    };
    for &(a, b) in &ADJACENT_LEGS {
        for (pa, ra) in spheres(a) {
            for (pb, rb) in spheres(b) {
                if (pa - pb).norm() < ra + rb {
                    out.push(hit(id));
                }
                id += 1;
            }
        }
    }
    let [hx, hy, hz] = model.base_half_extents;
    let r = model.foot_radius;
    for frame in frames {
        let p = frame.foot;
        if p.x.abs() < hx + r && p.y.abs() < hy + r && p.z.abs() < hz + r {
            out.push(hit(id));
        }
        id += 1;
    }
    out
}
