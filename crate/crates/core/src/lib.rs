//! Data engineering for keyboard/mouse game-agent trajectories.

pub mod action_space;
pub mod alignment;
pub mod augment;
pub mod builder;
pub mod capture;
pub mod harness;
pub mod idm;
pub mod memory;
pub mod pipeline;
pub mod policy;
pub mod sparse_thinking;
pub mod synth;
pub mod trajectory;
pub mod weighting;
