use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Floating-point element type of tensors and tapes.
///
/// Training runs in `f32`; gradient checks rebuild the same graphs in `f64`.
pub trait Real: Float + FromPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static {
    /// `c = alpha * a * b + beta * c` over arbitrary strides.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; each operand is given as
    /// a slice plus (row stride, column stride) measured in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite real")
    }
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: (&[Self], isize, isize),
                b: (&[Self], isize, isize),
                beta: Self,
                c: (&mut [Self], isize, isize),
            ) {
                assert!(span(m, k, a.1, a.2) <= a.0.len(), "gemm: lhs out of bounds");
                assert!(span(k, n, b.1, b.2) <= b.0.len(), "gemm: rhs out of bounds");
                assert!(span(m, n, c.1, c.2) <= c.0.len(), "gemm: output out of bounds");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every element addressed by the strides lies inside the
                // slices (checked above), and `c` is exclusively borrowed.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.0.as_ptr(),
                        a.1,
                        a.2,
                        b.0.as_ptr(),
                        b.1,
                        b.2,
                        beta,
                        c.0.as_mut_ptr(),
                        c.1,
                        c.2,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);
