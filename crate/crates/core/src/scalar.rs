use std::fmt::{Debug, Display};
use std::iter::Sum;

use nalgebra::{Matrix3, Vector3};
use num_traits::{Float, FromPrimitive, NumAssign};

/// Real scalar used for positions, features and probabilities.
///
/// Implemented for `f32` and `f64`. Every kernel in this crate is generic over
/// it; the crate root exposes `f64` aliases for the common case.
pub trait Real:
    Float
    + FromPrimitive
    + NumAssign
    + nalgebra::Scalar
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + 'static
{
    /// Singular value decomposition of a 3×3 matrix as `(U, sigma, Vᵀ)` with
    /// `sigma` sorted in descending order.
    fn svd3(m: &Matrix3<Self>) -> (Matrix3<Self>, Vector3<Self>, Matrix3<Self>);

    /// Converts an `f64` literal. Panics only for values not representable at
    /// all, which cannot happen for `f32`/`f64`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            fn svd3(m: &Matrix3<$t>) -> (Matrix3<$t>, Vector3<$t>, Matrix3<$t>) {
                let svd = nalgebra::SVD::new(*m, true, true);
                let mut u = svd.u.expect("requested U");
                let mut v_t = svd.v_t.expect("requested V^T");
                let mut s = svd.singular_values;
                // nalgebra does not guarantee ordering for the 3×3 path
                let mut order = [0usize, 1, 2];
                order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
                if order != [0, 1, 2] {
                    let (u0, s0, vt0) = (u, s, v_t);
                    for (dst, &src) in order.iter().enumerate() {
                        u.set_column(dst, &u0.column(src));
                        v_t.set_row(dst, &vt0.row(src));
                        s[dst] = s0[src];
                    }
                }
                (u, s, v_t)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
