//! Floating-point abstraction for the numeric layers.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Scalar type the numeric code is generic over.
///
/// Implemented for `f32` and `f64`. The helper constructors keep literals
/// readable at call sites; they panic only for non-finite inputs, which never
/// occur for the compile-time literals they are used with.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal or derived quantity into `Self`.
    fn real(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    /// Widens to `f64` for accumulation and reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite value")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
