//! Semi-supervised contrastive learning with prototype pseudo-labels and
//! entropy-gated MMD distribution matching, on a small reverse-mode tape.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix `f64`, which is what training and checkpoints use by default.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod augment;
pub mod data;
pub mod error;
pub mod gradcheck_suite;
pub mod loss_mmd;
pub mod loss_ssc;
pub mod model;
pub mod numeric;
pub mod pseudo_label;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix64 = numeric::Matrix<f64>;
pub type Matrix32 = numeric::Matrix<f32>;
pub type Tape64 = numeric::Tape<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type Model64 = model::Model<f64>;
pub type Model32 = model::Model<f32>;
