//! Simplified quadruped rigid-body simulator: floating base, 12 revolute
//! joints, flat-ground penalty contact with Coulomb friction.

pub mod contact;
pub mod kinematics;
pub mod model;
pub mod sim;
pub mod state;

pub use contact::{Contact, ContactClass, ContactReport};
pub use kinematics::{foot_kinematics, leg_frame, leg_frames, stance_height, LegFrame};
pub use model::{
    posture_to_joints, RobotModel, NUM_JOINTS, NUM_LEGS, SITTING_POSTURE, STANCE_POSTURE,
};
pub use sim::{mechanical_energy, step};
pub use state::{base_height, gravity_in_body, GeneralizedState, Q_DIM, U_DIM};

/// Simulation step (400 Hz).
pub const SIM_DT: f64 = 0.0025;
/// Simulation steps per control step (100 Hz control).
pub const CONTROL_DECIMATION: usize = 4;
