//! Scalar abstraction for the numeric core.
//!
//! Tensor and geometry code is generic over [`Scalar`] so the same kernels
//! run at f32 or f64. The pipeline instantiates everything at f64 (see the
//! crate-root aliases): checkpoints store f64 payloads and the gradient
//! checks need the headroom.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Floating-point scalar usable by the tensor engine and geometry kernels.
pub trait Scalar: Float + Debug + Display + Default + Sum + 'static {
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_usize(v: usize) -> Self;

    /// π for this precision.
    fn pi() -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_usize(v: usize) -> Self {
        v as f32
    }
    #[inline]
    fn pi() -> Self {
        std::f32::consts::PI
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_usize(v: usize) -> Self {
        v as f64
    }
    #[inline]
    fn pi() -> Self {
        std::f64::consts::PI
    }
}
