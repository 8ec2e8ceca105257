#![allow(dead_code)]

use rand::Rng;
use vesselscreen_core::rng::{stream, Stream};
use vesselscreen_core::tensor::{Tape, Tensor, Var};

pub fn rng(seed: u64) -> Stream {
    stream(seed, &[0xdead_beef])
}

pub fn random_tensor(rng: &mut Stream, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks are not straddled.
pub fn random_tensor_off_zero(rng: &mut Stream, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let vals = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, vals).unwrap()
}

/// Projects a node onto a fixed random direction, yielding a scalar node.
pub fn project(tape: &mut Tape<f64>, v: Var, dir: &Tensor<f64>) -> Var {
    let len = tape.tensor(v).len();
    let flat = tape.reshape(v, &[1, len]).unwrap();
    let w = tape.constant(dir.clone().reshape(&[len, 1]).unwrap());
    let b = tape.constant(Tensor::zeros(&[1]));
    tape.linear(flat, w, b).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central finite-difference check of `loss(inputs)` against the tape
/// gradient. Perturbations that move any ReLU or max-pool across a branch
/// are skipped. Returns the worst relative error and the number of checked
/// coordinates.
pub fn fd_check<F>(inputs: &[Tensor<f64>], h: f64, max_coords_per_input: usize, seed: u64, loss: F) -> (f64, usize)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let run = |ins: &[Tensor<f64>]| -> (Tape<f64>, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.param(t.clone())).collect();
        let out = loss(&mut tape, &vars);
        (tape, vars, out)
    };
    let (mut tape, vars, out) = run(inputs);
    tape.backward(out).unwrap();
    let base_sig = tape.branch_signature();
    let mut pick = rng(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]);
        let coords: Vec<usize> = if t.len() <= max_coords_per_input {
            (0..t.len()).collect()
        } else {
            (0..max_coords_per_input).map(|_| pick.random_range(0..t.len())).collect()
        };
        for i in coords {
            let eval = |delta: f64| {
                let mut ins = inputs.to_vec();
                ins[k].values_mut()[i] += delta;
                let (tp, _, o) = run(&ins);
                (tp.scalar(o), tp.branch_signature())
            };
            let (fp, sp) = eval(h);
            let (fm, sm) = eval(-h);
            if sp != base_sig || sm != base_sig {
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

/// Brute-force cross-correlation with zero padding 1.
pub fn conv3d_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let xs = x.shape();
    let (n, ci, d, h, w) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let co = k.shape()[0];
    let xv = x.values();
    let kv = k.values();
    let mut out = vec![0.0; n * co * d * h * w];
    for s in 0..n {
        for o in 0..co {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = b.values()[o];
                        for c in 0..ci {
                            for kz in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let iz = z as isize + kz as isize - 1;
                                        let iy = y as isize + ky as isize - 1;
                                        let ix = xx as isize + kx as isize - 1;
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= w as isize {
                                            continue;
                                        }
                                        let xi = (((s * ci + c) * d + iz as usize) * h + iy as usize) * w + ix as usize;
                                        let ki = (((o * ci + c) * 3 + kz) * 3 + ky) * 3 + kx;
                                        acc += xv[xi] * kv[ki];
                                    }
                                }
                            }
                        }
                        out[(((s * co + o) * d + z) * h + y) * w + xx] = acc;
                    }
                }
            }
        }
    }
    out
}

pub fn maxpool_oracle(x: &Tensor<f64>) -> Vec<f64> {
    let xs = x.shape();
    let (nc, d, h, w) = (xs[0] * xs[1], xs[2], xs[3], xs[4]);
    let mut out = Vec::new();
    for p in 0..nc {
        for z in 0..d / 2 {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    let mut m = f64::NEG_INFINITY;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = ((p * d + 2 * z + dz) * h + 2 * y + dy) * w + 2 * xx + dx;
                                m = m.max(x.values()[i]);
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    out
}

pub fn matmul_oracle(x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let u = wt.shape()[1];
    let mut out = vec![0.0; n * u];
    for r in 0..n {
        for j in 0..u {
            let mut acc = b.values()[j];
            for i in 0..f {
                acc += x.values()[r * f + i] * wt.values()[i * u + j];
            }
            out[r * u + j] = acc;
        }
    }
    out
}
