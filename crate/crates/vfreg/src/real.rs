use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use rustfft::FftNum;

/// Floating-point sample type of grid fields and spectral operators.
pub trait Real: Float + FromPrimitive + FftNum + Default + Sum + Display + Debug + Send + Sync {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

macro_rules! impl_real {
    ($($t:ty),*) => {$(
        impl Real for $t {
            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    )*};
}

impl_real!(f32, f64);
