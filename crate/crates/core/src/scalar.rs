use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the numerical core is written against.
///
/// Implemented for `f32` and `f64`. Training, checkpoints and the MIP solver
/// default to `f64`; `f32` instantiations are useful for fast forward passes.
pub trait Scalar:
    'static
    + Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Default
    + Debug
    + Display
    + LowerExp
    + Sum
    + Send
    + Sync
{
    /// Pivot / feasibility tolerance used by the simplex solver.
    const LP_TOL: f64;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn relu(self) -> Self {
        if self > Self::zero() {
            self
        } else {
            Self::zero()
        }
    }

    #[inline]
    fn pos_part(self) -> Self {
        self.relu()
    }

    #[inline]
    fn neg_part(self) -> Self {
        if self < Self::zero() {
            self
        } else {
            Self::zero()
        }
    }
}

impl Scalar for f32 {
    const LP_TOL: f64 = 1e-5;
}

impl Scalar for f64 {
    const LP_TOL: f64 = 1e-9;
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

pub(crate) fn all_finite<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}
