//! Configuration, checkpoints, synthetic data and experiment orchestration.

pub mod checkpoint;
pub mod config;
pub mod pipeline;
pub mod synth;
