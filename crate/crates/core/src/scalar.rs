//! Floating-point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the network is generic over: `f32` or `f64`.
///
/// Besides the usual `Float` arithmetic it exposes a dense GEMM hook so the
/// hot products can run through a blocked kernel instead of naive loops.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Number of significant decimal digits needed for an exact text roundtrip.
    const ROUNDTRIP_DIGITS: usize;

    /// `c = a · b + beta · c` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
    ///
    /// `beta` is 0 or 1 in practice; with 0 the prior contents of `c` are ignored.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every float scalar")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to every float scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float scalar converts to f64")
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path, $digits:expr) => {
        impl Scalar for $t {
            const ROUNDTRIP_DIGITS: usize = $digits;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(c.len() >= m * n, "gemm output buffer too small");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if beta == 0.0 {
                        c[..m * n].iter_mut().for_each(|v| *v = 0.0);
                    }
                    return;
                }
                // SAFETY: callers pass slices covering the strided extents; the
                // extents are checked by the tensor layer before dispatch.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f64, matrixmultiply::dgemm, 17);
impl_scalar!(f32, matrixmultiply::sgemm, 9);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_loops_with_transposed_operand() {
        // a: 2×3, b given as its transpose stored 2×3 (so b is 3×2 via strides)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bt = [1.0, 0.0, -1.0, 2.0, 1.0, 0.5];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, &a, (3, 1), &bt, (1, 3), 0.0, &mut c);
        let expect = [
            1.0 * 1.0 + 2.0 * 0.0 + 3.0 * -1.0,
            1.0 * 2.0 + 2.0 * 1.0 + 3.0 * 0.5,
            4.0 * 1.0 + 5.0 * 0.0 + 6.0 * -1.0,
            4.0 * 2.0 + 5.0 * 1.0 + 6.0 * 0.5,
        ];
        assert_eq!(c, expect);
    }

    #[test]
    fn gemm_accumulates_with_unit_beta() {
        let mut c = [10.0f32];
        f32::gemm(1, 1, 1, &[2.0], (1, 1), &[3.0], (1, 1), 1.0, &mut c);
        assert_eq!(c[0], 16.0);
    }
}
