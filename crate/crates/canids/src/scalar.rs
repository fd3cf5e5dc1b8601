//! Scalar abstraction so the numeric core runs on f32 or f64.
//!
//! The detection pipeline defaults to f32 for speed; tests that need tight
//! numeric tolerances (gradient checking) instantiate the same code with f64.

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lossy construction from an f64 literal.
#[inline]
pub fn c<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 conversion")
}
