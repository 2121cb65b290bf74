//! Analytic PD actuator: joint position targets to saturated torques.
//!
//! Stands in for a learned actuator model. The joint-state history that such
//! a model would consume is kept by [`crate::env::HistoryBuffer`].

use serde::{Deserialize, Serialize};

use crate::dynamics::{GeneralizedState, NUM_JOINTS};
use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActuatorConfig {
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
}

impl Default for ActuatorConfig {
    fn default() -> Self {
        ActuatorConfig {
            kp: 250.0,
            kd: 5.0,
            torque_limit: 40.0,
        }
    }
}

impl ActuatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp > 0.0) || !(self.kd >= 0.0) || !(self.torque_limit > 0.0) {
            return Err(Error::Config(format!(
                "actuator: need kp > 0, kd >= 0, torque_limit > 0 (got {self:?})"
            )));
        }
        if ![self.kp, self.kd, self.torque_limit].iter().all(|v| v.is_finite()) {
            return Err(Error::Config("actuator: non-finite gain".into()));
        }
        Ok(())
    }
}

/// Wraps `a - b` into (-pi, pi].
pub fn shortest_angle(a: f64, b: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let d = (a - b).rem_euclid(two_pi);
    if d > std::f64::consts::PI {
        d - two_pi
    } else {
        d
    }
}

pub fn pd_torque(
    cfg: &ActuatorConfig,
    target: &[f64; NUM_JOINTS],
    state: &GeneralizedState,
) -> Result<[f64; NUM_JOINTS]> {
    ensure_finite("joint position target", target)?;
    let q = state.joint_angles();
    let qd = state.joint_velocities();
    Ok(std::array::from_fn(|j| {
        let error = shortest_angle(target[j], q[j]);
        (cfg.kp * error - cfg.kd * qd[j]).clamp(-cfg.torque_limit, cfg.torque_limit)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};
    use proptest::prelude::*;

    fn state_with(q: [f64; 12], qd: [f64; 12]) -> GeneralizedState {
        let mut s = GeneralizedState::new(Vector3::zeros(), UnitQuaternion::identity(), q);
        s.joint_velocities_mut().copy_from_slice(&qd);
        s
    }

    #[test]
    fn proportional_and_saturated() {
        let cfg = ActuatorConfig { kp: 50.0, kd: 0.4, torque_limit: 40.0 };
        let state = state_with([0.0; 12], [0.0; 12]);
        let tau = pd_torque(&cfg, &[0.1; 12], &state).unwrap();
        assert!(tau.iter().all(|t| (t - 5.0).abs() < 1e-12));
        let tau = pd_torque(&cfg, &[2.0; 12], &state).unwrap();
        assert!(tau.iter().all(|&t| t == 40.0));
        let tau = pd_torque(&cfg, &[0.0; 12], &state).unwrap();
        assert!(tau.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn uses_shortest_angle() {
        let cfg = ActuatorConfig::default();
        let state = state_with([3.1; 12], [0.0; 12]);
        let tau = pd_torque(&cfg, &[-3.1; 12], &state).unwrap();
        let wrapped = std::f64::consts::TAU - 6.2;
        // 250 * 0.083 is below saturation
        assert!(tau.iter().all(|t| (t - cfg.kp * wrapped).abs() < 1e-9));
    }

    #[test]
    fn rejects_non_finite_target() {
        let cfg = ActuatorConfig::default();
        let state = state_with([0.0; 12], [0.0; 12]);
        let mut target = [0.0; 12];
        target[3] = f64::NAN;
        assert!(pd_torque(&cfg, &target, &state).is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_odd(err in -3.0f64..3.0, vel in -20.0f64..20.0) {
            let cfg = ActuatorConfig::default();
            let plus = pd_torque(&cfg, &[err; 12], &state_with([0.0; 12], [vel; 12])).unwrap();
            let minus = pd_torque(&cfg, &[-err; 12], &state_with([0.0; 12], [-vel; 12])).unwrap();
            for j in 0..12 {
                prop_assert!(plus[j].abs() <= cfg.torque_limit);
                prop_assert!((plus[j] + minus[j]).abs() < 1e-12);
            }
        }
    }
}
