//! Multi-level pseudo-labeling for semi-supervised classification in a frozen
//! embedding space.
//!
//! Unlabeled samples get pseudo-labels fused from three sources: the
//! classifier head, similarity to per-class text anchors, and similarity to a
//! memory buffer of labeled and confidently pseudo-labeled features. The fused
//! distribution is aligned to a class prior, thresholded, and used to
//! supervise a strongly augmented view.

pub mod buffer;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod numeric;
pub mod pseudolabel;

pub use error::{Error, Result};
