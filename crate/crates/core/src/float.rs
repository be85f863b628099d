//! Scalar abstraction for the numerical core.
//!
//! Everything downstream is generic over [`Float`] so the same code runs in
//! `f32` and `f64`. The crate root exports `f64` aliases for the common types;
//! use those unless you have a reason not to.

use nalgebra::RealField;

/// Real scalar usable throughout the toolkit.
///
/// `RealField` brings the transcendental functions and linear algebra
/// support; the extra methods cover the places where we cross between the
/// generic scalar and concrete `f64` (RNG draws, file formats, constants).
pub trait Float: RealField + Copy + Default + Send + Sync + std::iter::Sum {
    /// Lossy conversion from `f64`. Used for constants and RNG draws, which
    /// are always sampled in `f64` so that `f32` and `f64` runs consume
    /// identical random streams.
    fn of(v: f64) -> Self;

    /// Lossy conversion to `f64`, for serialization and reporting.
    fn as_f64(self) -> f64;

    /// True when the value is neither NaN nor infinite.
    fn finite(self) -> bool;
}

impl Float for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    #[inline]
    fn finite(self) -> bool {
        self.is_finite()
    }
}

impl Float for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn finite(self) -> bool {
        self.is_finite()
    }
}
