//! Simulation, detection and explanation of traffic-signal tampering from
//! lane-detector statistics.
//!
//! The crate is organised as a pipeline:
//!
//! * [`simnet`] simulates a signalized grid, injects controller attacks and
//!   emits 23-feature detector records every 10 s;
//! * [`dataset`] normalizes, windows, splits and rebalances those records;
//! * [`neuralnet`] trains and evaluates the two-layer convolutional detector;
//! * [`xai`] explains predictions with occlusion, LIME and KernelSHAP, and
//!   projects data with PCA;
//! * [`triage`] sorts misclassifications into transitional-data and
//!   model-limitation errors;
//! * [`pipeline`] chains the stages with digest-checked artifacts.

mod binio;
pub mod dataset;
pub mod digest;
pub mod error;
pub mod neuralnet;
pub mod pipeline;
pub mod rng;
pub mod simnet;
pub mod triage;
pub mod xai;

pub use error::{Error, Result};
