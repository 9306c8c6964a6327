use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of every tensor in the crate.
///
/// Implemented for `f32` and `f64`. All numerical code is written against this
/// trait; the crate root exposes `f64` aliases because gradient checks at the
/// tolerances used by the test suite need double precision.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
