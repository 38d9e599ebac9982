//! Difficulty estimation for StepMania charts.

pub mod checkpoint;
pub mod experiment;
pub mod features;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod sm;
pub mod synth;
