//! Memorization-aware training on synthetic spurious-correlation data.
//!
//! The crate generates the toy datasets, trains linear softmax models with
//! ERM, MAT, reweighted and margin-shifted objectives, builds held-out
//! calibration from a twin probe, and scores exact leave-one-out influence.
//! [`expcli`] wires everything into reproducible experiment presets.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod expcli;
pub mod heldout;
pub mod influence;
pub mod linmodel;
pub mod matrix;
pub mod regression;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
