//! Temporally consistent surface reconstruction from deforming point-cloud
//! sequences with multi-patch atlases trained under metric-consistency and
//! rigid-equivariance losses, plus dense-correspondence evaluation.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod export;
pub mod geom;
pub mod losses;
pub mod model;
pub mod sampling;
pub mod spatial;
pub mod trainer;

pub use error::{Error, Result};
