//! Volumetric shape auto-encoding and abnormality classification.
//!
//! The pipeline: synthesize binary organ-like masks (`shapegen`), compress
//! each mask into a low-dimensional shape vector with a 3D convolutional
//! auto-encoder, and score abnormality with a small classifier trained
//! jointly with the encoder (`model`, `train`). Evaluation is stratified
//! cross-validation with ROC analysis (`eval`). Everything is deterministic
//! given a seed: reruns produce byte-identical artifacts.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod eval;
pub mod model;
pub mod rng;
pub mod shapegen;
pub mod tensor;
pub mod train;
pub mod voxel;
