//! Dense linear algebra, slice reductions and the gradient tape.

pub mod gradcheck;
mod matrix;
mod tape;
mod vector;

pub use matrix::{dot, sq_dist, Matrix};
pub use tape::{Gradients, Tape, Var};
pub use vector::{argmax, entropy, l2_normalize, log_sum_exp, norm, softmax, EPS_NORM};

pub(crate) use vector::entropy_unchecked;
