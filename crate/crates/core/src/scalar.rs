//! Scalar abstraction: every numeric routine in this crate is generic over
//! [`Real`], instantiated at `f32` for training/checkpoints and at `f64` by
//! the finite-difference test oracles.

use num_traits::{Float, NumAssignOps};

/// Floating-point scalar: `f32` or `f64`.
///
/// Reductions (matmul inner products, means, variances) always accumulate in
/// `f64` regardless of `Self`, so conversions both ways are part of the
/// contract.
pub trait Real: Float + NumAssignOps + Default + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Error function, evaluated in double precision.
    fn erf(self) -> Self {
        Self::from_f64(libm::erf(self.as_f64()))
    }

    /// Complementary error function, evaluated in double precision.
    ///
    /// Used for the normal CDF at large negative arguments, where
    /// `0.5 * (1 + erf)` would cancel to zero.
    fn erfc(self) -> Self {
        Self::from_f64(libm::erfc(self.as_f64()))
    }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}
