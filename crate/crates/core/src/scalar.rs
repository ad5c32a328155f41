//! Scalar abstraction shared by every numeric module.

use num_traits::{Float, FloatConst, NumAssignOps};
use rustfft::FftNum;

/// Floating-point scalar usable for images, spectra and solver state.
///
/// Implemented by `f32` and `f64` through the blanket impl.
pub trait Scalar: Float + FloatConst + NumAssignOps + FftNum {
    /// Lossless-enough conversion from `f64` for constants and tolerances.
    fn of_f64(v: f64) -> Self {
        Self::from(v).expect("f64 constant representable in scalar type")
    }

    /// Conversion to `f64` for reporting and serialization.
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}
