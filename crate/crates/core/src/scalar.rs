//! Scalar abstraction: every numeric pipeline stage is generic over `Scalar`,
//! instantiated as `f32` (fast sweeps) or `f64` (gradient checks, oracles).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar for datasets, encoders, and regression heads.
///
/// `FromStr`/`Display` are required so CSV and provider files round-trip
/// exactly at the scalar's own precision.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + FromStr
    + Display
    + Debug
    + Default
    + LinalgScalar
    + ScalarOperand
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}
