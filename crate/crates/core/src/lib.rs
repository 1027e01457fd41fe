//! Face alignment with a linear 3D morphable model.
//!
//! The crate is organised around the pipeline a regression-based 3D face
//! aligner needs, scaled down so that everything can be verified against
//! synthetic ground truth generated from the model itself:
//!
//! - [`morphable_model`]: shape synthesis from identity/expression
//!   coefficients, weak-perspective projection, pose encoding, synthetic
//!   bases, mesh and basis files.
//! - [`losses`]: PDC, VDC, WPDC, Wing and the merged Wing + 0.5·WPDC loss,
//!   each with an analytic gradient.
//! - [`attention`]: Spatial Group-wise Enhance and Coordinate Attention,
//!   forward and reverse mode.
//! - [`regressor`]: a small depthwise-separable bottleneck backbone with the
//!   attention blocks, SGD training with a plateau schedule, checkpoints.
//! - [`dataset`]: self-labelled synthetic crops with occlusion and lighting
//!   augmentation.
//! - [`evaluation`]: NME, yaw bucketing and table/CSV/overlay reports.
//! - [`gradcheck`]: the finite-difference verification suite.

pub mod attention;
mod binio;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod hash;
pub mod losses;
pub mod morphable_model;
pub mod regressor;

pub use error::{Error, Result};
pub use morphable_model::{
    Landmarks2D, MorphableBasis, ParamVector, Shape3D, NUM_EXP, NUM_ID, NUM_LANDMARKS,
    PARAM_DIM, POSE_DIM,
};
