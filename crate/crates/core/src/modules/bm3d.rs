//! Single-stage (hard-threshold) BM3D.
//!
//! Per channel: reference blocks on a half-block grid are matched against
//! every block in a search window by L2 distance; the closest `max_matched`
//! blocks are stacked, transformed with a separable 2D DCT plus a 1D DCT
//! across the stack, hard-thresholded at `threshold * sigma`, inverted, and
//! aggregated with weight `1 / kept_coefficients`.

use crate::error::Result;
use crate::tensor::Tensor;

pub const MIN_BLOCK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bm3dParams {
    pub block: usize,
    pub search: usize,
    pub max_matched: usize,
    pub threshold: f32,
    pub sigma: f32,
}

impl Bm3dParams {
    /// Builds parameters from physical values, clamping degenerate block sizes.
    pub fn from_actual(actual: &[f32]) -> Self {
        let mut block = actual[0].round().max(1.0) as usize;
        if block < MIN_BLOCK {
            log::warn!("bm3d: block size {block} below {MIN_BLOCK}, clamped");
            block = MIN_BLOCK;
        }
        Bm3dParams {
            block,
            search: actual[1].round().max(1.0) as usize,
            max_matched: actual[2].round().max(1.0) as usize,
            threshold: actual[3].max(0.0),
            sigma: actual[4].max(0.0),
        }
    }
}

/// Orthonormal DCT-II matrix, row-major `n x n`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let s = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            m[k * n + i] = s * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

/// Reference block origins along one axis: stride `block / 2`, always
/// including the last valid origin so every pixel is covered.
fn grid(len: usize, block: usize) -> Vec<usize> {
    let last = len - block;
    let stride = (block / 2).max(1);
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

struct Plane<'a> {
    data: &'a [f32],
    width: usize,
    channels: usize,
    channel: usize,
}

impl Plane<'_> {
    #[inline]
    fn get(&self, y: usize, x: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + self.channel] as f64
    }

    fn block(&self, y: usize, x: usize, n: usize) -> Vec<f64> {
        let mut b = Vec::with_capacity(n * n);
        for dy in 0..n {
            for dx in 0..n {
                b.push(self.get(y + dy, x + dx));
            }
        }
        b
    }
}

fn transform_2d(block: &[f64], c: &[f64], n: usize, inverse: bool) -> Vec<f64> {
    // forward: C B C^T; inverse: C^T B C
    let at = |i: usize, j: usize| if inverse { c[j * n + i] } else { c[i * n + j] };
    let mut tmp = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            tmp[i * n + j] = (0..n).map(|k| at(i, k) * block[k * n + j]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|k| tmp[i * n + k] * at(j, k)).sum();
        }
    }
    out
}

pub fn bm3d_lite(x: &Tensor, params: &Bm3dParams) -> Result<Tensor> {
    let (h, w, c) = x.shape();
    let n = params.block.min(h).min(w);
    let thr = (params.threshold * params.sigma) as f64;
    let c2 = dct_matrix(n);
    let rows = grid(h, n);
    let cols = grid(w, n);
    let half = (params.search / 2) as isize;
    let mut out = Tensor::zeros(h, w, c);

    for ch in 0..c {
        let plane = Plane {
            data: x.data(),
            width: w,
            channels: c,
            channel: ch,
        };
        let mut num = vec![0.0f64; h * w];
        let mut den = vec![0.0f64; h * w];
        for &ry in &rows {
            for &rx in &cols {
                let reference = plane.block(ry, rx, n);
                let y0 = (ry as isize - half).max(0) as usize;
                let y1 = ((ry as isize + half) as usize).min(h - n);
                let x0 = (rx as isize - half).max(0) as usize;
                let x1 = ((rx as isize + half) as usize).min(w - n);
                let mut candidates = Vec::new();
                for cy in y0..=y1 {
                    for cx in x0..=x1 {
                        let is_ref = cy == ry && cx == rx;
                        let d: f64 = if is_ref {
                            0.0
                        } else {
                            let mut s = 0.0;
                            for dy in 0..n {
                                for dx in 0..n {
                                    let v = plane.get(cy + dy, cx + dx) - reference[dy * n + dx];
                                    s += v * v;
                                }
                            }
                            s
                        };
                        candidates.push((d, !is_ref, cy, cx));
                    }
                }
                candidates.sort_by(|a, b| {
                    a.0.total_cmp(&b.0)
                        .then(a.1.cmp(&b.1))
                        .then(a.2.cmp(&b.2))
                        .then(a.3.cmp(&b.3))
                });
                let depth = params.max_matched.min(candidates.len()).max(1);
                let members = &candidates[..depth];

                let mut stack: Vec<Vec<f64>> = members
                    .iter()
                    .map(|&(_, _, y, x)| transform_2d(&plane.block(y, x, n), &c2, n, false))
                    .collect();
                let c1 = dct_matrix(depth);
                let mut kept = 0usize;
                let mut column = vec![0.0; depth];
                for k in 0..n * n {
                    for (i, col) in column.iter_mut().enumerate() {
                        *col = (0..depth).map(|j| c1[i * depth + j] * stack[j][k]).sum();
                    }
                    for v in column.iter_mut() {
                        if v.abs() > thr {
                            if *v != 0.0 {
                                kept += 1;
                            }
                        } else {
                            *v = 0.0;
                        }
                    }
                    for (j, member) in stack.iter_mut().enumerate() {
                        member[k] = (0..depth).map(|i| c1[i * depth + j] * column[i]).sum();
                    }
                }
                let weight = 1.0 / kept.max(1) as f64;
                for (&(_, _, y, x), coeffs) in members.iter().zip(&stack) {
                    let block = transform_2d(coeffs, &c2, n, true);
                    for dy in 0..n {
                        for dx in 0..n {
                            let i = (y + dy) * w + x + dx;
                            num[i] += weight * block[dy * n + dx];
                            den[i] += weight;
                        }
                    }
                }
            }
        }
        for i in 0..h * w {
            out.data_mut()[i * c + ch] = ((num[i] / den[i]) as f32).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}
