//! Floating-point scalar abstraction for the numeric core.
//!
//! Every numeric routine in this crate is generic over [`Real`] so the same
//! code runs in single or double precision. The crate root exports `f64`
//! aliases for the main types; the pipeline and the CLI use those.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum<Self>
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts from `f64`, rounding to the nearest representable value.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to scalar")
    }

    /// Converts a count to the scalar type.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to scalar")
    }

    /// Widens to `f64` for reporting and on-disk formats.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar widens to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(f32::of(1.5).as_f64(), 1.5);
        assert_eq!(f64::of_usize(7), 7.0);
        assert_eq!(<f64 as Real>::of(-0.25), -0.25);
    }
}
