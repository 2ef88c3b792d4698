//! # tackcoat
//!
//! Inverse GPR processing for pavement tack coats. The crate covers the full
//! chain from a layered pavement description to spatial maps of emulsion
//! proportioning:
//!
//! 1. [`scene`] builds pavement structures and the ground-truth quantity map
//!    (g/m²) of the tack coat between wearing and binder courses.
//! 2. [`em_forward`] synthesizes A-scans with a 1-D normal-incidence
//!    layered-media model driven by a Ricker source.
//! 3. [`features`] turns each A-scan into a fixed-length feature vector.
//! 4. [`svm`] trains soft-margin SVMs by sequential minimal optimization:
//!    two-class, one-vs-one multi-class and ε-regression, with a
//!    cross-validated grid search.
//! 5. [`eval`] computes confusion matrices, Dice scores and RMSE, and
//!    assembles predictions into maps.
//!
//! [`pipeline`] wires the stages together over the on-disk file formats
//! described in [`dataset`], driven by a flat [`config`] file.

pub mod config;
pub mod dataset;
pub mod em_forward;
pub mod error;
pub mod eval;
pub mod features;
pub mod grid;
pub mod pipeline;
pub mod scene;
pub mod svm;

pub use error::{Error, Result};
