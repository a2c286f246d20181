use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::mosaic_rggb;
use crate::rng::{seeded, stream, IspRng};
use crate::tensor::Tensor;

/// Exponent of the display gamma assumed by the synthesiser.
pub const DISPLAY_GAMMA: f32 = 2.2;
pub const WHITE_LEVEL: u16 = u16::MAX;

/// Heteroscedastic sensor noise: variance `sigma^2 + poisson_scale * signal`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sigma: f32,
    pub poisson_scale: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawMeta {
    pub black_level: u16,
    pub white_level: u16,
    pub ratio: f32,
    pub noise: NoiseParams,
    pub phase: String,
}

/// A single-channel RGGB mosaic in `[0, 1]` with its capture metadata.
/// Values are quantised to the 16-bit levels between black and white.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    pub bayer: Tensor,
    pub meta: RawMeta,
}

/// Random smooth scene: a colour gradient with soft-edged blobs, hard
/// rectangles and a faint texture, all in `[0.02, 0.98]`.
pub fn synth_scene(h: usize, w: usize, rng: &mut IspRng) -> Tensor {
    let corner: Vec<[f32; 3]> = (0..4).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    struct Blob {
        cy: f32,
        cx: f32,
        ry: f32,
        rx: f32,
        color: [f32; 3],
        hard: bool,
    }
    let n = rng.random_range(2..6);
    let blobs: Vec<Blob> = (0..n)
        .map(|_| Blob {
            cy: rng.random::<f32>() * h as f32,
            cx: rng.random::<f32>() * w as f32,
            ry: (0.1 + 0.3 * rng.random::<f32>()) * h as f32,
            rx: (0.1 + 0.3 * rng.random::<f32>()) * w as f32,
            color: [rng.random(), rng.random(), rng.random()],
            hard: rng.random_bool(0.5),
        })
        .collect();
    let freq = 0.2 + 0.6 * rng.random::<f32>();
    let amp = 0.04 * rng.random::<f32>();
    Tensor::from_fn(h, w, 3, |y, x, c| {
        let v = y as f32 / h.max(1) as f32;
        let u = x as f32 / w.max(1) as f32;
        let mut val = (1.0 - v) * ((1.0 - u) * corner[0][c] + u * corner[1][c])
            + v * ((1.0 - u) * corner[2][c] + u * corner[3][c]);
        for b in &blobs {
            let dy = (y as f32 - b.cy) / b.ry;
            let dx = (x as f32 - b.cx) / b.rx;
            let inside = if b.hard {
                if dy.abs() < 1.0 && dx.abs() < 1.0 { 1.0 } else { 0.0 }
            } else {
                (-(dy * dy + dx * dx) * 2.0).exp()
            };
            val = val * (1.0 - inside) + b.color[c] * inside;
        }
        val += amp * ((x as f32 * freq).sin() * (y as f32 * freq * 0.7).cos());
        val.clamp(0.02, 0.98)
    })
}

fn quantise(v: f32, black: u16, white: u16) -> f32 {
    let span = (white - black) as f32;
    let level = (v.clamp(0.0, 1.0) * span).round();
    level / span
}

/// Renders `rgb` as an underexposed noisy RGGB capture: inverse display
/// gamma, division by `ratio`, mosaicking, noise, clamping and 16-bit
/// quantisation.
pub fn synthesize_raw(rgb: &Tensor, ratio: f32, noise: NoiseParams, seed: u64) -> Result<RawSample> {
    if !(ratio > 0.0) {
        return Err(Error::Config(format!("exposure ratio must be > 0, got {ratio}")));
    }
    let linear = rgb.map(|v| v.clamp(0.0, 1.0).powf(DISPLAY_GAMMA) / ratio);
    let mut bayer = mosaic_rggb(&linear)?;
    let mut rng = seeded(seed);
    for v in bayer.data_mut() {
        let var = noise.sigma * noise.sigma + noise.poisson_scale * v.max(0.0);
        let n: f32 = StandardNormal.sample(&mut rng);
        *v = quantise(*v + var.sqrt() * n, 0, WHITE_LEVEL);
    }
    Ok(RawSample {
        bayer,
        meta: RawMeta { black_level: 0, white_level: WHITE_LEVEL, ratio, noise, phase: "RGGB".into() },
    })
}

/// `clamp(x * ratio, 0, 1)`.
pub fn exposure_compensate(x: &Tensor, ratio: f32) -> Tensor {
    x.map(|v| (v * ratio).clamp(0.0, 1.0))
}

/// Exposure-compensated RAW input and its clean sRGB target.
#[derive(Clone, Debug)]
pub struct LowLightSample {
    pub raw: RawSample,
    pub input: Tensor,
    pub target: Tensor,
}

/// `count` random scenes of `size x size` rendered as low-light captures.
pub fn low_light_dataset(
    count: usize,
    size: usize,
    ratio: f32,
    noise: NoiseParams,
    seed: u64,
) -> Result<Vec<LowLightSample>> {
    let mut rng = stream(seed, 0);
    (0..count)
        .map(|i| {
            let target = synth_scene(size, size, &mut rng);
            let raw = synthesize_raw(&target, ratio, noise, seed ^ ((i as u64 + 1) << 20))?;
            let input = exposure_compensate(&raw.bayer, ratio);
            Ok(LowLightSample { raw, input, target })
        })
        .collect()
}
