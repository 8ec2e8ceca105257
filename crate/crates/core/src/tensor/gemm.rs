use super::Real;

/// `C[m×n] = op(A)[m×k] · op(B)[k×n] + beta · C` on row-major slices.
///
/// With `a_t` the slice holds A transposed (k×m, row-major); likewise `b_t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    beta: T,
) {
    assert_eq!(a.len(), m * k, "lhs size");
    assert_eq!(b.len(), k * n, "rhs size");
    assert_eq!(c.len(), m * n, "output size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths checked above; strides describe exactly those
    // row-major layouts, and `c` does not alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn transposes() {
        // A = [[1,2,3],[4,5,6]], B = [[1,0],[0,1],[1,1]]
        let a = [1.0f64, 2., 3., 4., 5., 6.];
        let at = [1.0f64, 4., 2., 5., 3., 6.];
        let b = [1.0f64, 0., 0., 1., 1., 1.];
        let bt = [1.0f64, 0., 1., 0., 1., 1.];
        let want = [4.0, 5.0, 10.0, 11.0];
        for (aa, ta) in [(&a[..], false), (&at[..], true)] {
            for (bb, tb) in [(&b[..], false), (&bt[..], true)] {
                let mut c = vec![0.0; 4];
                matmul(2, 3, 2, aa, ta, bb, tb, &mut c, 0.0);
                assert_eq!(c, want);
            }
        }
        let mut c = vec![1.0; 4];
        matmul(2, 3, 2, &a, false, &b, false, &mut c, 1.0);
        assert_eq!(c, [5.0, 6.0, 11.0, 12.0]);
    }
}
