//! Predictive Vision Model: a hierarchy of small recurrent predictive units
//! trained online to predict their next input, with supervised readouts
//! used for visual object tracking.

pub mod bbox;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod executor;
pub mod metrics;
pub mod mlp;
pub mod parallel;
pub mod schedule;
pub mod synth;
pub mod topology;
pub mod tracker;
pub mod training;
pub mod unit;

pub use bbox::BoundingBox;
pub use config::{Dims, PvmConfig};
pub use dataset::{Frame, LabeledSequence, ReadoutTargets};
pub use error::{PvmError, Result};
pub use executor::{Mode, Regime, StepOutputs, System};
pub use topology::Topology;
