//! Scalar abstraction shared by the geometric and statistical code.
//!
//! Everything that is pure math (poses, projection, alignment, metrics,
//! bundle adjustment) is written against [`Real`], so it runs on `f32` and
//! `f64` alike. Image-space and rendering code works in `f64` directly.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating point scalar usable by the geometry and evaluation kernels.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Widens to `f64` for accumulation and reporting.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Tolerance for orthonormality and unit-norm checks.
    ///
    /// `1e-9` for `f64`; scaled to machine precision for narrower types.
    #[inline]
    fn invariant_tol() -> Self {
        let eps = Self::default_epsilon().as_f64();
        Self::lit((1e3 * eps).max(1e-9))
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Neumaier compensated sum. Keeps per-trajectory sums over ~10^8 pixels
/// accurate to a few ulps.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}
