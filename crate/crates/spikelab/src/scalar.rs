//! Scalar abstraction for the closed-form layers (quadrature, bubble
//! profiles). The meshed layers are pinned to `f64`; the pure math is
//! generic so profiles can be evaluated in `f32` or `f64`.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

pub trait Scalar:
    'static
    + Send
    + Sync
    + Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + std::fmt::LowerExp
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Lift an `f64` literal into the working scalar type.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal conversion")
}
