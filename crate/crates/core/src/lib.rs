//! Colorization of single-channel near-infrared images.
//!
//! The pipeline:
//!
//! 1. [`preprocess`]: dyadic image pyramid, per-level local normalization into
//!    mean / standard deviation / texture / detail images.
//! 2. [`topology`] and [`nn`]: a multi-scale CNN, one branch per pyramid level,
//!    with an optional bypass of the local mean into the fusion layer.
//! 3. [`inference`]: dense per-pixel evaluation of the network into a raw RGB
//!    estimate, with a fast fragment-interleaving path.
//! 4. [`postprocess`]: joint bilateral filtering on a bilateral grid guided by
//!    the input, then re-injection of the input's detail layer.
//!
//! [`trainer`] fits models on registered NIR/RGB pairs and [`metrics`]
//! provides RMSE and S-CIELAB. The `examples/` directory has one runnable
//! program per capability; the `nirc` binary exposes everything as
//! subcommands.

pub mod cli;
pub mod config;
pub mod error;
pub mod image;
pub mod inference;
pub mod metrics;
pub mod nn;
pub mod postprocess;
pub mod preprocess;
pub mod synthetic;
pub mod topology;
pub mod trainer;

pub use crate::error::{Error, Result};
pub use crate::image::{hadamard, load_image, save_image, Image};
pub use crate::preprocess::{decompose, DecomposeParams, Decomposition};
pub use crate::topology::{Model, TopologySpec};
