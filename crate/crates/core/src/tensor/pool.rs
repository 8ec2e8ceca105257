//! Non-overlapping 2×2×2 max pooling with floor semantics.

use alloc::vec::Vec;

use super::Real;

/// Returns pooled values and, per output, the linear input index that won.
/// Windows are scanned in increasing linear order and only a strictly larger
/// value replaces the current winner, so ties go to the lowest index.
pub(crate) fn forward<T: Real>(x: &[T], nc: usize, s: [usize; 3]) -> (Vec<T>, Vec<usize>) {
    let o = [s[0] / 2, s[1] / 2, s[2] / 2];
    let ip = s[0] * s[1] * s[2];
    let op = o[0] * o[1] * o[2];
    let mut out = Vec::with_capacity(nc * op);
    let mut arg = Vec::with_capacity(nc * op);
    for plane in 0..nc {
        let base = plane * ip;
        for a in 0..o[0] {
            for b in 0..o[1] {
                for c in 0..o[2] {
                    let mut best_i = base + ((2 * a) * s[1] + 2 * b) * s[2] + 2 * c;
                    let mut best = x[best_i];
                    for da in 0..2 {
                        for db in 0..2 {
                            for dc in 0..2 {
                                let i = base + ((2 * a + da) * s[1] + 2 * b + db) * s[2] + 2 * c + dc;
                                if x[i] > best {
                                    best = x[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn backward<T: Real>(dy: &[T], argmax: &[usize], input_len: usize) -> Vec<T> {
    let mut dx = alloc::vec![T::zero(); input_len];
    for (&g, &i) in dy.iter().zip(argmax) {
        dx[i] += g;
    }
    dx
}
