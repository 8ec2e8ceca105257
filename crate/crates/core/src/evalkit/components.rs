//! 26-connected component labeling and cubic dilation.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::volume::Dims3;

/// Component labels per voxel, numbered in order of each component's
/// smallest linear index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub labels: Vec<Option<u32>>,
    pub count: usize,
}

impl Components {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count];
        for l in self.labels.iter().flatten() {
            s[*l as usize] += 1;
        }
        s
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    // Keep the smaller index as root so roots are component minima.
    if ra < rb {
        parent[rb] = ra;
    } else if rb < ra {
        parent[ra] = rb;
    }
}

/// Labels the 26-connected components of `mask`.
pub fn connected_components(dims: Dims3, mask: &[bool]) -> Result<Components> {
    if mask.len() != dims.len() {
        bail!(Shape, "mask size {} does not match dims {}", mask.len(), dims);
    }
    let Dims3 { w, h, l } = dims;
    let mut parent: Vec<usize> = (0..mask.len()).collect();
    // Scanning in linear order, each voxel only needs its 13 earlier neighbours.
    for z in 0..l {
        for y in 0..h {
            for x in 0..w {
                let i = dims.index(x, y, z);
                if !mask[i] {
                    continue;
                }
                for dz in -1i64..=0 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if (dz, dy, dx) >= (0, 0, 0) {
                                continue;
                            }
                            let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if nx < 0 || ny < 0 || nz < 0 || nx >= w as i64 || ny >= h as i64 {
                                continue;
                            }
                            let j = dims.index(nx as usize, ny as usize, nz as usize);
                            if mask[j] {
                                union(&mut parent, i, j);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut label_of_root: Vec<Option<u32>> = vec![None; mask.len()];
    let mut labels = vec![None; mask.len()];
    let mut count = 0u32;
    for i in 0..mask.len() {
        if !mask[i] {
            continue;
        }
        let r = find(&mut parent, i);
        let lab = *label_of_root[r].get_or_insert_with(|| {
            count += 1;
            count - 1
        });
        labels[i] = Some(lab);
    }
    Ok(Components { labels, count: count as usize })
}

/// Dilation by a cube of half-width `radius` (Chebyshev ball).
pub fn dilate(dims: Dims3, mask: &[bool], radius: usize) -> Result<Vec<bool>> {
    if mask.len() != dims.len() {
        bail!(Shape, "mask size {} does not match dims {}", mask.len(), dims);
    }
    // Separable: a cube is the product of three 1-D windows.
    let mut cur = mask.to_vec();
    let strides = [1, dims.w, dims.w * dims.h];
    let extents = [dims.w, dims.h, dims.l];
    for axis in 0..3 {
        let mut next = vec![false; cur.len()];
        for (i, out) in next.iter_mut().enumerate() {
            let c = (i / strides[axis]) % extents[axis];
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(extents[axis] - 1);
            let base = i - c * strides[axis];
            *out = (lo..=hi).any(|k| cur[base + k * strides[axis]]);
        }
        cur = next;
    }
    Ok(cur)
}
