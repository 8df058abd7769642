use sixd_core::Real;

/// Scalars the network can run on: [`Real`] plus a GEMM kernel.
pub trait NetScalar: Real {
    /// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of shape `m x k`,
    /// `op(b)` of shape `k x n`, all buffers row-major before transposition.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_transposed: bool,
        b: &[Self],
        b_transposed: bool,
        beta: Self,
        c: &mut [Self],
    );
}

#[inline]
fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // logical (rows x cols); storage is row-major of the untransposed matrix
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_gemm {
    ($t:ty, $kernel:path) => {
        impl NetScalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_transposed: bool,
                b: &[Self],
                b_transposed: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm buffer too small");
                let (rsa, csa) = strides(m, k, a_transposed);
                let (rsb, csb) = strides(k, n, b_transposed);
                // SAFETY: the assert above bounds every index the kernel touches
                // for the given dimensions and strides.
                unsafe {
                    $kernel(
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
        }
    };
}

impl_gemm!(f32, matrixmultiply::sgemm);
impl_gemm!(f64, matrixmultiply::dgemm);
