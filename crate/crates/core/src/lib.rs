//! Extrapolation-controlled prediction profiling.
//!
//! Fits predictive models over mixed factor spaces, measures how far a
//! candidate prediction point lies from the training data's correlation
//! structure, and keeps profile traces and desirability optimization inside
//! the non-extrapolated region.
//!
//! Two metrics are provided:
//!
//! * **leverage** `h = xᵀ(XᵀX)⁻¹x` for least-squares models, thresholded at a
//!   multiple of the maximum or average training leverage;
//! * **regularized Hotelling's T²** for arbitrary models, using a
//!   pairwise-deletion shrinkage covariance toward its diagonal and a
//!   3-sigma upper control limit on the training T² values.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
pub mod data;
pub mod desirability;
pub mod error;
pub mod extrapolation;
pub mod models;
pub mod optimizer;
pub mod profiler;
pub mod simulation;

pub use error::{Error, Result};
