//! Scalar abstraction for the numeric core.
//!
//! Every tensor, layer and loss in this crate is generic over [`Scalar`] so the
//! same code path can run in f32 for training speed and in f64 for
//! finite-difference gradient verification.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from f64 literals and accumulators.
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 -> scalar conversion")
    }

    fn to_f64_s(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar -> f64 conversion")
    }

    fn of_f32(v: f32) -> Self {
        <Self as FromPrimitive>::from_f32(v).expect("f32 -> scalar conversion")
    }

    fn to_f32_s(self) -> f32 {
        <Self as ToPrimitive>::to_f32(&self).expect("scalar -> f32 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand used throughout the crate for embedding f64 constants.
#[inline]
pub fn sc<T: Scalar>(v: f64) -> T {
    T::of_f64(v)
}
