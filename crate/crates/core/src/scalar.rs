//! Scalar abstractions shared by the metric, attribution and learning code.
//!
//! [`Scalar`] is the minimal field-like bound used by the city metrics and the
//! Shapley enumeration; it is satisfied by `f32`, `f64` and exact rationals
//! such as `Rational64` from num-rational. [`Real`] adds the transcendental
//! functions needed by the neural networks and optimizers.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num, Signed};

/// Ordered signed number supporting exact or floating arithmetic.
pub trait Scalar: Num + Signed + PartialOrd + Clone + FromPrimitive + Debug {
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable in scalar type")
    }

    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }
}

impl<T> Scalar for T where T: Num + Signed + PartialOrd + Clone + FromPrimitive + Debug {}

/// Floating point scalar used by networks and stochastic optimizers.
pub trait Real: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}
