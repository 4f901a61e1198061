//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the engine can run on: `f32` or `f64`.
///
/// Everything numeric is written against this trait. Hyperparameters live in
/// the config as `f64` and are converted once with [`Real::lit`].
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal or config value into this scalar type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 value representable in scalar type")
    }

    /// Lossless (for `f64`) widening used by serialization and reporting.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Count as a scalar.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}
