//! Scalar abstraction: the numeric element type of every tensor.
//!
//! Training runs in `f32`; the same code instantiated at `f64` serves as a
//! high-precision verification mode with much tighter gradient-check
//! tolerances.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Central-difference step used by gradient verification at this precision.
    fn fd_step() -> Self;

    /// Default relative-error tolerance for gradient verification at this
    /// precision.
    fn fd_tol() -> Self;

    /// Lossy conversion to `f64` for logging and statistics.
    fn to_f64_lossy(self) -> f64;

    /// Conversion from an `f64` constant. Panics only if the target type
    /// cannot represent any approximation, which cannot happen for floats.
    fn from_f64_lossy(v: f64) -> Self;
}

impl Scalar for f32 {
    fn fd_step() -> Self {
        1e-3
    }

    fn fd_tol() -> Self {
        1e-3
    }

    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn fd_step() -> Self {
        1e-5
    }

    fn fd_tol() -> Self {
        1e-6
    }

    fn to_f64_lossy(self) -> f64 {
        self
    }

    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}
