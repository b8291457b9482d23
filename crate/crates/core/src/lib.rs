//! Multi-view stereo geometry and consistency toolkit.
//!
//! Plane-sweep depth estimation, normal-depth refinement, pixel- and
//! feature-wise consistency losses with analytic depth gradients, depth-map
//! fusion and point-cloud metrics, plus a synthetic scene renderer used as a
//! ground-truth oracle.

pub mod camera;
pub mod config;
pub mod error;
pub mod features;
pub mod fusion;
pub mod grid;
pub mod io;
pub mod lcg;
pub mod loss;
pub mod metrics;
pub mod normals;
pub mod pipeline;
pub mod refine;
pub mod scene;
pub mod sweep;

pub use error::{MvsError, Result};
