//! Multi-subdomain adversarial training for cross-subject classification.
//!
//! The crate bundles a small reverse-mode autodiff engine, a DE feature
//! pipeline for raw multichannel signals, a synthetic multi-subject
//! benchmark, K-means pseudo-labeling, the network definitions, the
//! adversarial training procedures and the file formats used by the CLI.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cluster;
pub mod error;
#[cfg(feature = "harness")]
pub mod harness;
pub mod nets;
pub mod optim;
pub mod pca;
pub mod signal;
pub mod synth;
pub mod trainer;

pub use error::{Error, ErrorCategory, Result};
