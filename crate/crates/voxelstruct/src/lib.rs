//! Structure-aware voxel shape synthesis.
//!
//! A voxel variational autoencoder is trained jointly with a landmark
//! structure detector through a shape-structure consistency loss, on a
//! procedurally generated chair dataset with analytic ground-truth landmarks.
//! Everything runs on CPU from explicit seeds; identical seeds give
//! byte-identical artifacts.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`tensor`] — dense tensors with reverse-mode automatic differentiation
//! - [`voxel`] — occupancy grids and the fixed 10-landmark chair structure
//! - [`nets`] — shape encoder, shape generator, and structure detector
//! - [`losses`] — reconstruction, KL, structure, and consistency losses
//! - [`dataset`] — procedural chair generation, augmentation, degradation
//! - [`training`] — Adam, pretraining loops, and collaborative training
//! - [`eval`] — IoU, completion, sparseness sweeps, interpolation, reports
//! - [`config`] — merged run configuration with content hashing
//! - [`cli`] — the `voxelstruct` binary's subcommands
//!
//! See the crate examples for one runnable program per capability.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nets;
pub mod tensor;
pub mod training;
pub mod util;
pub mod voxel;

pub use error::{Error, Result};
