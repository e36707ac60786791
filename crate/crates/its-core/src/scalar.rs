//! Scalar abstraction. The numeric core is generic over [`Real`] so the same
//! code runs in `f32` or `f64`; concrete `f64`-backed aliases live at the
//! crate root.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar everything numeric is parameterized over.
///
/// The supertraits cover arithmetic (`Float`, `NumAssign`), constants
/// (`FloatConst`), conversions (`FromPrimitive`), formatting, threading, and
/// serde, so downstream types can derive their impls without repeating bounds.
pub trait Real:
    'static
    + Send
    + Sync
    + Default
    + Debug
    + Display
    + LowerExp
    + Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + Serialize
    + DeserializeOwned
{
    /// Gauss error function; the exact GeLU activation is built on it.
    fn erf(self) -> Self;

    /// Conversion from an `f64` constant. Panics on values the scalar cannot
    /// represent at all (never happens for the literals used in this crate).
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant convertible to scalar")
    }

    /// Widen to `f64` for report emission.
    #[inline]
    fn widen(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Real for f64 {
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

impl Real for f32 {
    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }
}
