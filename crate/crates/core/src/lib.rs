//! Geometry of correctness representations in activation datasets.
//!
//! The crate loads (or synthesizes) per-layer activation matrices with binary
//! correctness labels, fits linear probes and supervised projections on
//! training folds only, and measures how many dimensions the label signal
//! actually occupies. Around that core sit an intrinsic-dimension estimator,
//! direction geometry across layers, a family of geometric classifiers,
//! cross-validation protocols and steering-vector construction.

pub mod error;
pub mod classifiers;
pub mod evaluation;
pub mod exec;
pub mod geometry;
pub mod linalg;
pub mod model_io;
pub mod probe;
pub mod projection;
pub mod steering;
pub mod store;

pub use error::{Error, Result};
pub use nalgebra;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Whether this build runs work on the rayon pool.
pub const PARALLEL: bool = cfg!(feature = "parallel");
