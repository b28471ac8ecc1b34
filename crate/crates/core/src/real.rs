use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating point element type for tapes and tensors.
pub trait Real:
    Float
    + Debug
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn c(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c ← a · b + beta · c` for strided `a: m×k`, `b: k×n`, `c: m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_rs: usize, a_cs: usize, b: &[Self], b_rs: usize, b_cs: usize, beta: Self, c: &mut [Self], c_rs: usize, c_cs: usize);
}

impl Real for f64 {
    const NAME: &'static str = "float64";

    #[inline]
    fn c(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_rs: usize, a_cs: usize, b: &[f64], b_rs: usize, b_cs: usize, beta: f64, c: &mut [f64], c_rs: usize, c_cs: usize) {
        if m == 0 || n == 0 {
            return;
        }
        check_extents(m, k, n, a.len(), a_rs, a_cs, b.len(), b_rs, b_cs, c.len(), c_rs, c_cs);
        // SAFETY: extents checked above; strides are non-negative and fit isize.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0, a.as_ptr(), a_rs as isize, a_cs as isize, b.as_ptr(), b_rs as isize, b_cs as isize, beta,
                c.as_mut_ptr(), c_rs as isize, c_cs as isize,
            );
        }
    }
}

impl Real for f32 {
    const NAME: &'static str = "float32";

    #[inline]
    fn c(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_rs: usize, a_cs: usize, b: &[f32], b_rs: usize, b_cs: usize, beta: f32, c: &mut [f32], c_rs: usize, c_cs: usize) {
        if m == 0 || n == 0 {
            return;
        }
        check_extents(m, k, n, a.len(), a_rs, a_cs, b.len(), b_rs, b_cs, c.len(), c_rs, c_cs);
        // SAFETY: extents checked above; strides are non-negative and fit isize.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0, a.as_ptr(), a_rs as isize, a_cs as isize, b.as_ptr(), b_rs as isize, b_cs as isize, beta,
                c.as_mut_ptr(), c_rs as isize, c_cs as isize,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn check_extents(m: usize, k: usize, n: usize, a_len: usize, a_rs: usize, a_cs: usize, b_len: usize, b_rs: usize, b_cs: usize, c_len: usize, c_rs: usize, c_cs: usize) {
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(last(m, k, a_rs, a_cs) <= a_len, "gemm: lhs buffer too small");
    assert!(last(k, n, b_rs, b_cs) <= b_len, "gemm: rhs buffer too small");
    assert!(last(m, n, c_rs, c_cs) <= c_len, "gemm: output buffer too small");
}
