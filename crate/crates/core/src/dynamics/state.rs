use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::model::NUM_JOINTS;

pub const Q_DIM: usize = 19;
pub const U_DIM: usize = 18;

/// Floating-base configuration and velocity.
///
/// `q` = base position (world, m) ++ base orientation quaternion (w, x, y, z)
/// ++ 12 joint angles. `u` = base linear velocity (body frame) ++ base
/// angular velocity (body frame) ++ 12 joint velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedState {
    pub q: [f64; Q_DIM],
    pub u: [f64; U_DIM],
    pub time: f64,
}

impl GeneralizedState {
    pub fn new(
        position: Vector3<f64>,
        orientation: UnitQuaternion<f64>,
        joints: [f64; NUM_JOINTS],
    ) -> Self {
        let mut state = GeneralizedState {
            q: [0.0; Q_DIM],
            u: [0.0; U_DIM],
            time: 0.0,
        };
        state.set_base_position(position);
        state.set_orientation(orientation);
        state.q[7..].copy_from_slice(&joints);
        state
    }

    pub fn base_position(&self) -> Vector3<f64> {
        Vector3::new(self.q[0], self.q[1], self.q[2])
    }

    pub fn set_base_position(&mut self, p: Vector3<f64>) {
        self.q[..3].copy_from_slice(p.as_slice());
    }

    /// Raw (possibly non-unit) quaternion as stored.
    pub fn quaternion(&self) -> Quaternion<f64> {
        Quaternion::new(self.q[3], self.q[4], self.q[5], self.q[6])
    }

    pub fn orientation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_normalize(self.quaternion())
    }

    pub fn set_orientation(&mut self, rot: UnitQuaternion<f64>) {
        let q = rot.into_inner();
        self.q[3] = q.w;
        self.q[4] = q.i;
        self.q[5] = q.j;
        self.q[6] = q.k;
    }

    pub fn joint_angles(&self) -> &[f64] {
        &self.q[7..]
    }

    pub fn joint_angles_mut(&mut self) -> &mut [f64] {
        &mut self.q[7..]
    }

    pub fn base_linear_velocity(&self) -> Vector3<f64> {
        Vector3::new(self.u[0], self.u[1], self.u[2])
    }

    pub fn base_angular_velocity(&self) -> Vector3<f64> {
        Vector3::new(self.u[3], self.u[4], self.u[5])
    }

    pub fn set_base_linear_velocity(&mut self, v: Vector3<f64>) {
        self.u[..3].copy_from_slice(v.as_slice());
    }

    pub fn set_base_angular_velocity(&mut self, w: Vector3<f64>) {
        self.u[3..6].copy_from_slice(w.as_slice());
    }

    pub fn joint_velocities(&self) -> &[f64] {
        &self.u[6..]
    }

    pub fn joint_velocities_mut(&mut self) -> &mut [f64] {
        &mut self.u[6..]
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.u.iter()).all(|v| v.is_finite()) && self.time.is_finite()
    }
}

/// World down direction expressed in the base frame.
pub fn gravity_in_body(state: &GeneralizedState) -> Vector3<f64> {
    state
        .orientation()
        .inverse_transform_vector(&Vector3::new(0.0, 0.0, -1.0))
}

/// Height of the base origin above the flat ground plane at z = 0.
pub fn base_height(state: &GeneralizedState) -> f64 {
    state.q[2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Rotates v by q via the explicit q v q* Hamilton product.
    fn rotate_by_hand(q: [f64; 4], v: [f64; 3]) -> [f64; 3] {
        let mul = |a: [f64; 4], b: [f64; 4]| {
            [
                a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
            ]
        };
        let conj = [q[0], -q[1], -q[2], -q[3]];
        let r = mul(mul(q, [0.0, v[0], v[1], v[2]]), conj);
        [r[1], r[2], r[3]]
    }

    fn with_rotation(rot: UnitQuaternion<f64>) -> GeneralizedState {
        GeneralizedState::new(Vector3::new(0.0, 0.0, 0.5), rot, [0.0; NUM_JOINTS])
    }

    #[test]
    fn gravity_identity_and_upside_down() {
        let g = gravity_in_body(&with_rotation(UnitQuaternion::identity()));
        assert_eq!(g, Vector3::new(0.0, 0.0, -1.0));

        let g = gravity_in_body(&with_rotation(UnitQuaternion::from_euler_angles(PI, 0.0, 0.0)));
        assert!((g - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn gravity_pitch_matches_hand_rotation() {
        let rot = UnitQuaternion::from_euler_angles(0.0, FRAC_PI_2, 0.0);
        let g = gravity_in_body(&with_rotation(rot));
        // body <- world is the conjugate rotation
        let c = rot.into_inner();
        let expected = rotate_by_hand([c.w, -c.i, -c.j, -c.k], [0.0, 0.0, -1.0]);
        for k in 0..3 {
            assert!((g[k] - expected[k]).abs() < 1e-14);
        }
        // pitch +90 deg about y: world down lies along body +x
        assert!((g - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-14);
        assert!((g.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn height_is_base_z_and_yaw_invariant() {
        let s = with_rotation(UnitQuaternion::identity());
        assert_eq!(base_height(&s), 0.5);
        let yawed = with_rotation(UnitQuaternion::from_euler_angles(0.0, 0.0, 1.1));
        assert_eq!(base_height(&yawed), base_height(&s));
    }
}
