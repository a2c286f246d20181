//! Gamma correction and global tone curves.
//!
//! * gamma: `y = clamp(x, 0, 1)^g`
//! * Reinhard: `s = x * key / Lavg`, `y = s (1 + s / white^2) / (1 + s)`,
//!   with `Lavg` the log-average Rec.709 luminance of the image
//! * Crysis engine: `y = 1 - exp(-exposure * x)`
//! * filmic: Hable's curve `H(v)` with shoulder strength `A` and linear
//!   strength `B` (`C = 0.1, D = 0.2, E = 0.02, F = 0.3`), evaluated at
//!   `2x` and normalised so `y(1) = 1`
//! * manual: monotone piecewise-linear curve through `(0, 0)`, three knots
//!   at `x = 0.25, 0.5, 0.75`, and `(1, 1)`
//!
//! All curves clamp their output to `[0, 1]`.

use crate::tensor::Tensor;

/// Smallest base used when differentiating `x^g` near zero.
const GAMMA_FLOOR: f32 = 1e-3;

pub fn gamma(x: &Tensor, g: f32) -> Tensor {
    x.map(|v| v.clamp(0.0, 1.0).powf(g))
}

/// Returns `(d/dx, d/dg)` of the gamma curve at one sample.
pub fn gamma_grad(x: f32, g: f32) -> (f32, f32) {
    if x <= 0.0 {
        return (0.0, 0.0);
    }
    let xc = x.min(1.0);
    let dg = xc.powf(g) * xc.ln();
    let dx = if x >= 1.0 {
        0.0
    } else {
        g * xc.max(GAMMA_FLOOR).powf(g - 1.0)
    };
    (dx, dg)
}

pub fn reinhard_curve(s: f32, white: f32) -> f32 {
    let w2 = white * white;
    let shoulder = if w2.is_infinite() { 1.0 } else { 1.0 + s / w2 };
    s * shoulder / (1.0 + s)
}

/// Log-average Rec.709 luminance with a small offset for black pixels.
pub fn log_average_luminance(x: &Tensor) -> f64 {
    let n = (x.height() * x.width()) as f64;
    let sum: f64 = x
        .data()
        .chunks_exact(3)
        .map(|p| {
            let l = 0.2126 * p[0] as f64 + 0.7152 * p[1] as f64 + 0.0722 * p[2] as f64;
            (1e-4 + l.max(0.0)).ln()
        })
        .sum();
    (sum / n).exp()
}

pub fn reinhard(x: &Tensor, key: f32, white: f32) -> Tensor {
    let scale = (key as f64 / log_average_luminance(x)) as f32;
    x.map(|v| reinhard_curve(v.max(0.0) * scale, white).clamp(0.0, 1.0))
}

pub fn crysisengine(x: &Tensor, exposure: f32) -> Tensor {
    x.map(|v| (1.0 - (-exposure * v.max(0.0)).exp()).clamp(0.0, 1.0))
}

pub fn hable(v: f32, shoulder: f32, linear: f32) -> f32 {
    const C: f32 = 0.1;
    const D: f32 = 0.2;
    const E: f32 = 0.02;
    const F: f32 = 0.3;
    let a = shoulder;
    let b = linear;
    (v * (a * v + C * b) + D * E) / (v * (a * v + b) + D * F) - E / F
}

pub const FILMIC_EXPOSURE_BIAS: f32 = 2.0;

pub fn filmic(x: &Tensor, shoulder: f32, linear: f32) -> Tensor {
    let norm = hable(FILMIC_EXPOSURE_BIAS, shoulder, linear);
    x.map(|v| {
        (hable(FILMIC_EXPOSURE_BIAS * v.clamp(0.0, 1.0), shoulder, linear) / norm).clamp(0.0, 1.0)
    })
}

/// Knot heights sorted ascending, with the permutation back to the
/// caller's parameter order (`order[i]` = parameter index of sorted knot i).
pub fn sorted_knots(knots: &[f32]) -> ([f32; 3], [usize; 3]) {
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| knots[a].total_cmp(&knots[b]));
    (
        [
            knots[order[0]].clamp(0.0, 1.0),
            knots[order[1]].clamp(0.0, 1.0),
            knots[order[2]].clamp(0.0, 1.0),
        ],
        order,
    )
}

/// Evaluates the manual curve; returns `(y, segment, t)`.
#[inline]
pub fn manual_eval(x: f32, ys: &[f32; 5]) -> (f32, usize, f32) {
    let xc = x.clamp(0.0, 1.0);
    let seg = ((xc * 4.0).floor() as usize).min(3);
    let t = xc * 4.0 - seg as f32;
    (ys[seg] + (ys[seg + 1] - ys[seg]) * t, seg, t)
}

pub fn manual_curve_points(knots: &[f32]) -> [f32; 5] {
    let (s, _) = sorted_knots(knots);
    [0.0, s[0], s[1], s[2], 1.0]
}

pub fn manual(x: &Tensor, knots: &[f32]) -> Tensor {
    let ys = manual_curve_points(knots);
    x.map(|v| manual_eval(v, &ys).0)
}
