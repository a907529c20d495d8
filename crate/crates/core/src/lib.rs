//! Word-level sign recognition from skeleton keypoints.
//!
//! A clip of per-frame 2D poses is encoded spatially by stacked residual
//! graph convolutions over a learned fully connected skeleton graph, then
//! temporally by a transformer encoder with a classification token. The two
//! encoders each project into class space; their sum is the logit vector.
//!
//! Everything runs on a small dense-tensor reverse-mode autodiff engine in
//! [`tensor`], so every analytic gradient can be checked against finite
//! differences. No GPU, no external ML framework.

// `as Real` casts are f64 no-ops in the default build but required for the
// real32 feature.
#![allow(clippy::unnecessary_cast)]
// index loops mirror the matrix formulas they implement
#![allow(clippy::needless_range_loop)]

pub mod bert;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod fusion;
pub mod gcn;
pub mod gradcheck;
pub mod model;
pub mod pose;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::Error;
pub use tensor::{Real, Tensor};
