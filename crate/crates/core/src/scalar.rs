//! Scalar abstraction: every numeric kernel in the workspace is generic over
//! [`Scalar`] so the same code runs in f32 (training) and f64 (gradient checks).

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float
    + NumAssignOps
    + ScalarOperand
    + LinalgScalar
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Constant conversion from f64 (lossy for f32); how literals enter kernels.
    fn from_f(x: f64) -> Self;
    fn to_f(self) -> f64;
}

impl Scalar for f32 {
    fn from_f(x: f64) -> Self {
        x as f32
    }
    fn to_f(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f(x: f64) -> Self {
        x
    }
    fn to_f(self) -> f64 {
        self
    }
}
