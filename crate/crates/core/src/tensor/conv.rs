//! 3×3×3 "same" cross-correlation via im2col + GEMM.

use alloc::vec;
use alloc::vec::Vec;

use super::gemm::matmul;
use super::Real;

pub(crate) const KVOL: usize = 27;

/// Valid output range along one axis for kernel tap `k` (0..3) with pad 1:
/// output positions `o` whose source `o + k - 1` lies inside `0..n`.
#[inline]
fn valid(n: usize, k: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { n.saturating_sub(1) } else { n };
    (lo.min(hi), hi)
}

/// Unfolds one sample `[ci, s0, s1, s2]` into `[ci*27, s0*s1*s2]`.
fn im2col<T: Real>(x: &[T], ci: usize, s: [usize; 3], col: &mut [T]) {
    let p = s[0] * s[1] * s[2];
    let plane = s[1] * s[2];
    debug_assert_eq!(col.len(), ci * KVOL * p);
    col.fill(T::zero());
    for c in 0..ci {
        let xc = &x[c * p..(c + 1) * p];
        for k0 in 0..3 {
            let (a0, b0) = valid(s[0], k0);
            for k1 in 0..3 {
                let (a1, b1) = valid(s[1], k1);
                for k2 in 0..3 {
                    let (a2, b2) = valid(s[2], k2);
                    if a2 >= b2 {
                        continue;
                    }
                    let row = ((c * 3 + k0) * 3 + k1) * 3 + k2;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for o0 in a0..b0 {
                        let i0 = o0 + k0 - 1;
                        for o1 in a1..b1 {
                            let i1 = o1 + k1 - 1;
                            let d = o0 * plane + o1 * s[2];
                            let src = i0 * plane + i1 * s[2];
                            dst[d + a2..d + b2]
                                .copy_from_slice(&xc[src + a2 + k2 - 1..src + b2 + k2 - 1]);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[ci*27, P]` back into `[ci, s0, s1, s2]`.
fn col2im<T: Real>(col: &[T], ci: usize, s: [usize; 3], dx: &mut [T]) {
    let p = s[0] * s[1] * s[2];
    let plane = s[1] * s[2];
    for c in 0..ci {
        let dxc = &mut dx[c * p..(c + 1) * p];
        for k0 in 0..3 {
            let (a0, b0) = valid(s[0], k0);
            for k1 in 0..3 {
                let (a1, b1) = valid(s[1], k1);
                for k2 in 0..3 {
                    let (a2, b2) = valid(s[2], k2);
                    if a2 >= b2 {
                        continue;
                    }
                    let row = ((c * 3 + k0) * 3 + k1) * 3 + k2;
                    let src = &col[row * p..(row + 1) * p];
                    for o0 in a0..b0 {
                        let i0 = o0 + k0 - 1;
                        for o1 in a1..b1 {
                            let i1 = o1 + k1 - 1;
                            let o = o0 * plane + o1 * s[2];
                            let d = i0 * plane + i1 * s[2];
                            let span = &mut dxc[d + a2 + k2 - 1..d + b2 + k2 - 1];
                            for (dv, &sv) in span.iter_mut().zip(&src[o + a2..o + b2]) {
                                *dv += sv;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub co: usize,
    pub s: [usize; 3],
}

impl ConvGeom {
    fn p(&self) -> usize {
        self.s[0] * self.s[1] * self.s[2]
    }
}

pub(crate) fn forward<T: Real>(g: &ConvGeom, x: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    let p = g.p();
    let kdim = g.ci * KVOL;
    let mut out = vec![T::zero(); g.n * g.co * p];
    let mut col = vec![T::zero(); kdim * p];
    for n in 0..g.n {
        im2col(&x[n * g.ci * p..(n + 1) * g.ci * p], g.ci, g.s, &mut col);
        let y = &mut out[n * g.co * p..(n + 1) * g.co * p];
        for (c, row) in y.chunks_exact_mut(p).enumerate() {
            row.fill(bias[c]);
        }
        matmul(g.co, kdim, p, kernel, false, &col, false, y, T::one());
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub(crate) fn backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    kernel: &[T],
    dy: &[T],
    need_input: bool,
) -> ConvGrads<T> {
    let p = g.p();
    let kdim = g.ci * KVOL;
    let mut col = vec![T::zero(); kdim * p];
    let mut dcol = if need_input { vec![T::zero(); kdim * p] } else { Vec::new() };
    let mut dx = if need_input { vec![T::zero(); x.len()] } else { Vec::new() };
    let mut dk = vec![T::zero(); g.co * kdim];
    let mut db = vec![0.0f64; g.co];
    for n in 0..g.n {
        let dyn_ = &dy[n * g.co * p..(n + 1) * g.co * p];
        for (c, row) in dyn_.chunks_exact(p).enumerate() {
            db[c] += row.iter().map(|v| v.f64()).sum::<f64>();
        }
        im2col(&x[n * g.ci * p..(n + 1) * g.ci * p], g.ci, g.s, &mut col);
        let beta = if n == 0 { T::zero() } else { T::one() };
        matmul(g.co, p, kdim, dyn_, false, &col, true, &mut dk, beta);
        if need_input {
            matmul(kdim, g.co, p, kernel, true, dyn_, false, &mut dcol, T::zero());
            col2im(&dcol, g.ci, g.s, &mut dx[n * g.ci * p..(n + 1) * g.ci * p]);
        }
    }
    ConvGrads {
        input: need_input.then_some(dx),
        kernel: dk,
        bias: db.into_iter().map(T::of).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_ranges() {
        assert_eq!(valid(5, 0), (1, 5));
        assert_eq!(valid(5, 1), (0, 5));
        assert_eq!(valid(5, 2), (0, 4));
        assert_eq!(valid(1, 0), (1, 1));
        assert_eq!(valid(1, 2), (0, 0));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x, c.
        let s = [3usize, 2, 4];
        let ci = 2;
        let p = 24;
        let x: Vec<f64> = (0..ci * p).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let c: Vec<f64> = (0..ci * KVOL * p).map(|i| ((i * 104729) % 11) as f64 - 5.0).collect();
        let mut col = vec![0.0; ci * KVOL * p];
        im2col(&x, ci, s, &mut col);
        let mut back = vec![0.0; ci * p];
        col2im(&c, ci, s, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
