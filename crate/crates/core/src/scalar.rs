//! Floating-point abstraction shared by the numerical kernels.
//!
//! Likelihood math runs in `f64`; network weights default to `f32`. Every
//! kernel that does not care is written once against [`Scalar`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar usable by the linear algebra, likelihood and network code.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Name written into tensor headers when this type is persisted.
    const DTYPE: &'static str;

    /// Complementary error function.
    fn erfc(self) -> Self;

    /// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
    ///
    /// `op(a)` is `m x k`, `op(b)` is `k x n`, `c` is `m x n`. When a
    /// transpose flag is set the corresponding buffer is stored transposed
    /// (`k x m` for `a`, `n x k` for `b`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );
}

/// Convert an `f64` literal into `T`. Panics only for non-representable
/// values, which cannot happen for `f32`/`f64`.
#[inline]
pub fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 is representable in every Scalar")
}

#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("Scalar converts to f64")
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // logical (rows x cols) view over a row-major buffer
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! gemm_impl {
    ($t:ty, $f:path) => {
        fn gemm(
            m: usize,
            k: usize,
            n: usize,
            alpha: Self,
            a: &[Self],
            trans_a: bool,
            b: &[Self],
            trans_b: bool,
            beta: Self,
            c: &mut [Self],
        ) {
            assert!(a.len() >= m * k, "gemm: lhs buffer too short");
            assert!(b.len() >= k * n, "gemm: rhs buffer too short");
            assert!(c.len() >= m * n, "gemm: output buffer too short");
            if m == 0 || n == 0 {
                return;
            }
            let (rsa, csa) = strides(m, k, trans_a);
            let (rsb, csb) = strides(k, n, trans_b);
            // SAFETY: the asserts above guarantee every strided access made
            // by the kernel for an (m x k) * (k x n) product stays in bounds.
            unsafe {
                $f(
                    m,
                    k,
                    n,
                    alpha,
                    a.as_ptr(),
                    rsa,
                    csa,
                    b.as_ptr(),
                    rsb,
                    csb,
                    beta,
                    c.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
    };
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn erfc(self) -> Self {
        libm::erfcf(self)
    }

    gemm_impl!(f32, matrixmultiply::sgemm);
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn erfc(self) -> Self {
        libm::erfc(self)
    }

    gemm_impl!(f64, matrixmultiply::dgemm);
}
