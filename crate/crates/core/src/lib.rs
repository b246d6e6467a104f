//! Synthetic capacity-fade data generation and degradation-prediction
//! benchmarking for lithium-ion battery aging datasets.
//!
//! The pipeline moves in one direction: measured capacity-fade curves come in
//! as a [`curve::Dataset`], the [`sdg`] module estimates offset/slope/elongation
//! statistics from cell pairs and synthesizes new curves from them,
//! [`landmarks`] extracts end-of-life and knee-point labels, and the [`gpr`]
//! and [`cnn`] predictors plus the [`eval`] harness quantify what the
//! synthetic data buys in prediction accuracy.
//!
//! Everything downstream of a master seed is deterministic; see [`rng`] for
//! the stream-derivation scheme shared by all randomized components.

pub mod benchmark;
pub mod cnn;
pub mod config;
pub mod curve;
pub mod eval;
pub mod gpr;
pub mod interp;
pub mod io;
pub mod landmarks;
pub mod rng;
pub mod sdg;

pub use curve::{CapacityCurve, Dataset};
pub use landmarks::Landmarks;
pub use sdg::{ParamRanges, SdgParams};
