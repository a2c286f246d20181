//! Classic spatial denoisers: bilateral, median and non-local means.
//!
//! All filters use reflect-101 borders and clamp their output to `[0, 1]`.
//! Bayer variants run the filter independently on each RGGB sub-plane.

use crate::error::Result;
use crate::image::{pack_rggb, unpack_rggb};
use crate::tensor::{reflect, Tensor};

/// Maps a continuous window-size parameter onto an odd size and returns its
/// radius, shrinking it if it does not fit inside a `h x w` image.
pub fn window_radius(size: f32, h: usize, w: usize, what: &str) -> usize {
    let r = ((size.max(1.0) - 1.0) / 2.0).round() as usize;
    let limit = (h.min(w).saturating_sub(1)) / 2;
    if r > limit {
        log::warn!(
            "{what}: window {} exceeds {h}x{w} image, clamped to {}",
            2 * r + 1,
            2 * limit + 1
        );
        limit
    } else {
        r
    }
}

/// Applies `filter` to each of the four RGGB planes of a mosaic.
pub fn per_bayer_plane(
    mosaic: &Tensor,
    filter: impl Fn(&Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    let packed = pack_rggb(mosaic)?;
    let planes: Vec<Tensor> = (0..4)
        .map(|p| filter(&packed.channel(p)))
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor> = planes.iter().collect();
    unpack_rggb(&Tensor::concat_channels(&refs)?)
}

/// Reflect-padded copy with `pad` pixels on every side.
pub(crate) fn pad_reflect(x: &Tensor, pad: usize) -> Tensor {
    let (h, w, c) = x.shape();
    Tensor::from_fn(h + 2 * pad, w + 2 * pad, c, |y, xx, ch| {
        x.at(
            reflect(y as isize - pad as isize, h),
            reflect(xx as isize - pad as isize, w),
            ch,
        )
    })
}

/// Joint bilateral filter: spatial Gaussian times a range Gaussian on the
/// Euclidean colour distance.
pub fn bilateral(x: &Tensor, window: f32, sigma_spatial: f32, sigma_range: f32) -> Result<Tensor> {
    let (h, w, c) = x.shape();
    let r = window_radius(window, h, w, "bilateral");
    if r == 0 {
        return Ok(x.clamp01());
    }
    let padded = pad_reflect(x, r);
    let pw = padded.width();
    let inv_s = 1.0 / (2.0 * sigma_spatial * sigma_spatial);
    let inv_r = 1.0 / (2.0 * sigma_range * sigma_range);
    let ri = r as isize;
    let spatial: Vec<f32> = (-ri..=ri)
        .flat_map(|dy| (-ri..=ri).map(move |dx| ((dy * dy + dx * dx) as f32 * -inv_s).exp()))
        .collect();
    let src = padded.data();
    let mut out = Tensor::zeros(h, w, c);
    let mut acc = vec![0.0f64; c];
    for y in 0..h {
        for xx in 0..w {
            let centre = &src[((y + r) * pw + xx + r) * c..((y + r) * pw + xx + r + 1) * c];
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut norm = 0.0f64;
            let mut k = 0;
            for dy in 0..=2 * r {
                for dx in 0..=2 * r {
                    let q = &src[((y + dy) * pw + xx + dx) * c..((y + dy) * pw + xx + dx + 1) * c];
                    let d2: f32 = q.iter().zip(centre).map(|(a, b)| (a - b) * (a - b)).sum();
                    let wgt = (spatial[k] * (-d2 * inv_r).exp()) as f64;
                    k += 1;
                    norm += wgt;
                    for (a, &v) in acc.iter_mut().zip(q) {
                        *a += wgt * v as f64;
                    }
                }
            }
            for ch in 0..c {
                out.set(y, xx, ch, ((acc[ch] / norm) as f32).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Per-channel median over a square window.
pub fn median(x: &Tensor, window: f32) -> Result<Tensor> {
    let (h, w, c) = x.shape();
    let r = window_radius(window, h, w, "median");
    if r == 0 {
        return Ok(x.clamp01());
    }
    let padded = pad_reflect(x, r);
    let side = 2 * r + 1;
    let mut buf = Vec::with_capacity(side * side);
    Ok(Tensor::from_fn(h, w, c, |y, xx, ch| {
        buf.clear();
        for dy in 0..side {
            for dx in 0..side {
                buf.push(padded.at(y + dy, xx + dx, ch));
            }
        }
        let mid = buf.len() / 2;
        let (_, m, _) = buf.select_nth_unstable_by(mid, f32::total_cmp);
        m.clamp(0.0, 1.0)
    }))
}

/// Non-local means. Patch distance is the mean squared difference over the
/// patch and channels; weights are `exp(-d / strength^2)`.
pub fn nlm(x: &Tensor, patch: f32, search: f32, strength: f32) -> Result<Tensor> {
    let (h, w, c) = x.shape();
    let pr = window_radius(patch, h, w, "nlm patch");
    let sr = window_radius(search, h, w, "nlm search");
    let pad = pr + sr;
    let padded = pad_reflect(x, pad);
    let pw = padded.width();
    let src = padded.data();
    let inv_h2 = 1.0 / (strength * strength).max(1e-12);
    let norm = 1.0 / (((2 * pr + 1) * (2 * pr + 1) * c) as f32);
    let mut out = Tensor::zeros(h, w, c);
    let mut acc = vec![0.0f64; c];
    for y in 0..h {
        for xx in 0..w {
            let (py, px) = (y + pad, xx + pad);
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut total = 0.0f64;
            for qy in py - sr..=py + sr {
                for qx in px - sr..=px + sr {
                    let mut d2 = 0.0f32;
                    for uy in 0..=2 * pr {
                        let ra = ((py + uy - pr) * pw + px - pr) * c;
                        let rb = ((qy + uy - pr) * pw + qx - pr) * c;
                        let len = (2 * pr + 1) * c;
                        d2 += src[ra..ra + len]
                            .iter()
                            .zip(&src[rb..rb + len])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f32>();
                    }
                    let wgt = ((-d2 * norm) * inv_h2).exp() as f64;
                    total += wgt;
                    let q = &src[(qy * pw + qx) * c..(qy * pw + qx + 1) * c];
                    for (a, &v) in acc.iter_mut().zip(q) {
                        *a += wgt * v as f64;
                    }
                }
            }
            for ch in 0..c {
                out.set(y, xx, ch, ((acc[ch] / total) as f32).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}
