//! Row-major matrix product kernels backed by `matrixmultiply`. All of them
//! accumulate into `out`.

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    gemm(a, (k, 1), b, (n, 1), m, k, n, out);
}

/// `out[m,n] += a[m,k] · b[n,k]ᵀ`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    gemm(a, (k, 1), b, (1, k), m, k, n, out);
}

/// `out[m,n] += a[r,m]ᵀ · b[r,n]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], r: usize, m: usize, n: usize, out: &mut [f64]) {
    gemm(a, (1, m), b, (n, 1), m, r, n, out);
}

/// `out[m,n] += A[m,k] · B[k,n]` with `A` and `B` given by (row, column)
/// strides.
#[allow(clippy::too_many_arguments)]
fn gemm(a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), m: usize, k: usize, n: usize, out: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
