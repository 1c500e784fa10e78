//! Scalar abstraction shared by every numerical module.

use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::{FloatConst, FromPrimitive, ToPrimitive};

/// Real floating point scalar the library is generic over (`f32` or `f64`).
pub trait Real: NdFloat + FloatConst + FromPrimitive + ToPrimitive + Default + Sum + 'static {
    /// Converts an `f64` literal into `Self`.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl<T> Real for T where T: NdFloat + FloatConst + FromPrimitive + ToPrimitive + Default + Sum + 'static {}

/// Natural log of the Gaussian density `N(x; mean, var)`.
pub fn log_normal_pdf<T: Real>(x: T, mean: T, var: T) -> T {
    let d = x - mean;
    -(d * d) / (T::lit(2.0) * var) - T::lit(0.5) * (T::lit(2.0) * T::PI() * var).ln()
}

/// Logistic function evaluated without overflow.
pub fn logistic<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
