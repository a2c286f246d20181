//! White balance and colour correction on sRGB tensors.
//!
//! Backward functions return gradients with respect to the actual
//! (denormalised) parameters.

use crate::tensor::Tensor;

/// Means below this are treated as zero; such channels pass through.
const MEAN_EPS: f64 = 1e-8;

/// Linearly interpolated percentile (`pct` in `[0, 100]`) of one channel.
pub fn channel_percentile(x: &Tensor, c: usize, pct: f32) -> f32 {
    let mut v: Vec<f32> = x.data().iter().skip(c).step_by(x.channels()).copied().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_unstable_by(f32::total_cmp);
    let pos = (pct.clamp(0.0, 100.0) as f64 / 100.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let t = (pos - lo as f64) as f32;
    v[lo] + (v[hi] - v[lo]) * t
}

/// Scales each channel so its `pct`-th percentile maps to one, then clamps.
pub fn whitepatch(x: &Tensor, pct: f32) -> Tensor {
    let gains: Vec<f32> = (0..x.channels())
        .map(|c| {
            let p = channel_percentile(x, c, pct);
            if p > 1e-6 {
                1.0 / p
            } else {
                1.0
            }
        })
        .collect();
    apply_gains(x, &gains).clamp01()
}

fn apply_gains(x: &Tensor, gains: &[f32]) -> Tensor {
    let mut out = x.clone();
    for px in out.data_mut().chunks_exact_mut(gains.len()) {
        for (v, g) in px.iter_mut().zip(gains) {
            *v *= g;
        }
    }
    out
}

fn channel_means(x: &Tensor) -> Vec<f64> {
    x.channel_stats().into_iter().map(|(m, _)| m).collect()
}

/// Per-channel gains `global_mean / channel_mean`; `None` marks a zero-mean
/// channel that passes through.
fn grayworld_gains(means: &[f64]) -> Vec<Option<f64>> {
    let global = means.iter().sum::<f64>() / means.len() as f64;
    means
        .iter()
        .map(|&m| (m.abs() > MEAN_EPS).then(|| global / m))
        .collect()
}

pub fn grayworld(x: &Tensor) -> Tensor {
    let gains: Vec<f32> = grayworld_gains(&channel_means(x))
        .into_iter()
        .map(|g| g.unwrap_or(1.0) as f32)
        .collect();
    apply_gains(x, &gains)
}

pub fn grayworld_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let ch = x.channels();
    let n = (x.height() * x.width()) as f64;
    let means = channel_means(x);
    let global = means.iter().sum::<f64>() / ch as f64;
    let gains = grayworld_gains(&means);
    // s[c] = sum_i g_c(i) x_c(i)
    let mut s = vec![0.0f64; ch];
    for (px, g) in x.data().chunks_exact(ch).zip(grad_out.data().chunks_exact(ch)) {
        for c in 0..ch {
            s[c] += g[c] as f64 * px[c] as f64;
        }
    }
    let shared: f64 = (0..ch)
        .filter_map(|c| gains[c].map(|_| s[c] / (ch as f64 * n * means[c])))
        .sum();
    let per_channel: Vec<f64> = (0..ch)
        .map(|c| match gains[c] {
            Some(_) => shared - s[c] * global / (means[c] * means[c] * n),
            None => shared,
        })
        .collect();
    let mut out = grad_out.clone();
    for px in out.data_mut().chunks_exact_mut(ch) {
        for c in 0..ch {
            let g = gains[c].unwrap_or(1.0);
            px[c] = (px[c] as f64 * g + per_channel[c]) as f32;
        }
    }
    out
}

pub fn linear(x: &Tensor, gains: &[f32]) -> Tensor {
    apply_gains(x, gains)
}

/// Returns `(d/dx, d/dgains)`.
pub fn linear_backward(x: &Tensor, gains: &[f32], grad_out: &Tensor) -> (Tensor, Vec<f32>) {
    let ch = x.channels();
    let mut dg = vec![0.0f64; ch];
    for (px, g) in x.data().chunks_exact(ch).zip(grad_out.data().chunks_exact(ch)) {
        for c in 0..ch {
            dg[c] += g[c] as f64 * px[c] as f64;
        }
    }
    (apply_gains(grad_out, gains), dg.into_iter().map(|v| v as f32).collect())
}

/// `(r, g, b, r², g², b², rg, rb, gb, 1)`.
#[inline]
pub fn quadratic_features(p: &[f32]) -> [f32; 10] {
    let (r, g, b) = (p[0], p[1], p[2]);
    [r, g, b, r * r, g * g, b * b, r * g, r * b, g * b, 1.0]
}

/// `coeffs` is row-major: output channel `c` uses `coeffs[10c..10c + 10]`.
pub fn quadratic(x: &Tensor, coeffs: &[f32]) -> Tensor {
    let mut out = x.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let f = quadratic_features(px);
        for c in 0..3 {
            px[c] = f.iter().zip(&coeffs[10 * c..10 * c + 10]).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// Returns `(d/dx, d/dcoeffs)`.
pub fn quadratic_backward(x: &Tensor, coeffs: &[f32], grad_out: &Tensor) -> (Tensor, Vec<f32>) {
    let mut dcoef = vec![0.0f64; 30];
    let mut dx = x.clone();
    for (px, g) in dx.data_mut().chunks_exact_mut(3).zip(grad_out.data().chunks_exact(3)) {
        let (r, gr, b) = (px[0], px[1], px[2]);
        let f = quadratic_features(px);
        // d feature_k / d (r, g, b)
        let jac: [[f32; 3]; 10] = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [2.0 * r, 0.0, 0.0],
            [0.0, 2.0 * gr, 0.0],
            [0.0, 0.0, 2.0 * b],
            [gr, r, 0.0],
            [b, 0.0, r],
            [0.0, b, gr],
            [0.0, 0.0, 0.0],
        ];
        let mut d = [0.0f32; 3];
        for c in 0..3 {
            let row = &coeffs[10 * c..10 * c + 10];
            for k in 0..10 {
                dcoef[10 * c + k] += g[c] as f64 * f[k] as f64;
                for (di, j) in d.iter_mut().zip(jac[k]) {
                    *di += g[c] * row[k] * j;
                }
            }
        }
        px.copy_from_slice(&d);
    }
    (dx, dcoef.into_iter().map(|v| v as f32).collect())
}
