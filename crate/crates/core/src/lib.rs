//! Quadruped locomotion reinforcement learning without an external physics
//! engine.

pub mod actuator;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod nn;
pub mod ppo;
pub mod replay;
pub mod selector;
pub mod seeding;

pub use error::{Error, Result};
