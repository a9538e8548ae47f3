//! Semantic-conditioned feature generation for few-shot classification.
//!
//! A generator maps class-level semantic vectors into the visual feature
//! space. It is trained jointly with a discriminator and a classifier on
//! precomputed features, and at evaluation time its output is blended into
//! the support-set centroids of N-way K-shot episodes.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod dataset;
pub mod episodic;
pub mod error;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod pca;
pub mod training;

pub use error::{Error, FormatError, Result};
