use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{reflect, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    #[default]
    Reflect,
    Zero,
}

/// A same-padded 2D convolution with odd kernel size.
///
/// Weights are stored `[ky][kx][cin][cout]` so the innermost loop runs over
/// contiguous output channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    #[serde(default)]
    pub padding: Padding,
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn zeros(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Conv2d {
            kernel,
            in_channels,
            out_channels,
            weight: vec![0.0; kernel * kernel * in_channels * out_channels],
            bias: vec![0.0; out_channels],
            padding: Padding::Reflect,
        }
    }

    /// He-normal initialisation.
    pub fn he_init<R: Rng + ?Sized>(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let mut conv = Self::zeros(kernel, in_channels, out_channels);
        let fan_in = (kernel * kernel * in_channels) as f32;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        for w in &mut conv.weight {
            *w = normal.sample(rng);
        }
        conv
    }

    #[inline]
    pub fn weight_index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.kernel + kx) * self.in_channels + ci) * self.out_channels + co
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        conv2d(input, self)
    }
}

fn offsets(n: usize, k: usize, padding: Padding) -> Vec<Option<usize>> {
    // offsets[i * k + t] = source index for output i, tap t
    let half = (k / 2) as isize;
    let mut table = Vec::with_capacity(n * k);
    for i in 0..n as isize {
        for t in 0..k as isize {
            let j = i + t - half;
            table.push(match padding {
                Padding::Reflect => Some(reflect(j, n)),
                Padding::Zero => (j >= 0 && j < n as isize).then_some(j as usize),
            });
        }
    }
    table
}

fn check_conv_shapes(input: &Tensor, conv: &Conv2d) -> Result<()> {
    if conv.kernel % 2 == 0 {
        return Err(Error::shape("conv2d", format!("even kernel size {}", conv.kernel)));
    }
    if input.channels() != conv.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!(
                "kernel expects {} input channels, input has {}",
                conv.in_channels,
                input.channels()
            ),
        ));
    }
    let expect = conv.kernel * conv.kernel * conv.in_channels * conv.out_channels;
    if conv.weight.len() != expect || conv.bias.len() != conv.out_channels {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weight has {} values (expected {}), bias {} (expected {})",
                conv.weight.len(),
                expect,
                conv.bias.len(),
                conv.out_channels
            ),
        ));
    }
    if input.is_empty() {
        return Err(Error::shape("conv2d", "empty input"));
    }
    Ok(())
}

/// Same-size 2D convolution (cross-correlation).
pub fn conv2d(input: &Tensor, conv: &Conv2d) -> Result<Tensor> {
    check_conv_shapes(input, conv)?;
    let (h, w, cin) = input.shape();
    let (k, cout) = (conv.kernel, conv.out_channels);
    let rows = offsets(h, k, conv.padding);
    let cols = offsets(w, k, conv.padding);
    let src = input.data();
    let mut out = vec![0.0f32; h * w * cout];
    for y in 0..h {
        for x in 0..w {
            let o = &mut out[(y * w + x) * cout..(y * w + x + 1) * cout];
            o.copy_from_slice(&conv.bias);
            for ky in 0..k {
                let Some(iy) = rows[y * k + ky] else { continue };
                for kx in 0..k {
                    let Some(ix) = cols[x * k + kx] else { continue };
                    let px = &src[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                    let wbase = (ky * k + kx) * cin * cout;
                    for (ci, &v) in px.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let row = &conv.weight[wbase + ci * cout..wbase + (ci + 1) * cout];
                        for (acc, &wv) in o.iter_mut().zip(row) {
                            *acc += v * wv;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(h, w, cout, out)
}

/// Gradients of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward(input: &Tensor, conv: &Conv2d, grad_out: &Tensor) -> Result<ConvGrads> {
    backward_impl(input, conv, grad_out, true)
}

/// Input gradient only; the returned weight and bias gradients are empty.
pub fn conv2d_backward_input(input: &Tensor, conv: &Conv2d, grad_out: &Tensor) -> Result<Tensor> {
    Ok(backward_impl(input, conv, grad_out, false)?.input)
}

fn backward_impl(
    input: &Tensor,
    conv: &Conv2d,
    grad_out: &Tensor,
    want_weights: bool,
) -> Result<ConvGrads> {
    check_conv_shapes(input, conv)?;
    let (h, w, cin) = input.shape();
    let (k, cout) = (conv.kernel, conv.out_channels);
    if grad_out.shape() != (h, w, cout) {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad {:?}, expected {:?}", grad_out.shape(), (h, w, cout)),
        ));
    }
    let rows = offsets(h, k, conv.padding);
    let cols = offsets(w, k, conv.padding);
    let src = input.data();
    let g = grad_out.data();
    let mut gin = vec![0.0f32; h * w * cin];
    let mut gw = vec![0.0f32; if want_weights { conv.weight.len() } else { 0 }];
    let mut gb = vec![0.0f64; if want_weights { cout } else { 0 }];
    for y in 0..h {
        for x in 0..w {
            let go = &g[(y * w + x) * cout..(y * w + x + 1) * cout];
            for (b, &v) in gb.iter_mut().zip(go) {
                *b += v as f64;
            }
            if go.iter().all(|&v| v == 0.0) {
                continue;
            }
            for ky in 0..k {
                let Some(iy) = rows[y * k + ky] else { continue };
                for kx in 0..k {
                    let Some(ix) = cols[x * k + kx] else { continue };
                    let base = (iy * w + ix) * cin;
                    let wbase = (ky * k + kx) * cin * cout;
                    for ci in 0..cin {
                        let row = &conv.weight[wbase + ci * cout..wbase + (ci + 1) * cout];
                        let dot: f32 = row.iter().zip(go).map(|(&a, &b)| a * b).sum();
                        gin[base + ci] += dot;
                        let v = src[base + ci];
                        if want_weights && v != 0.0 {
                            let grow = &mut gw[wbase + ci * cout..wbase + (ci + 1) * cout];
                            for (gwv, &gv) in grow.iter_mut().zip(go) {
                                *gwv += v * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(h, w, cin, gin)?,
        weight: gw,
        bias: gb.into_iter().map(|v| v as f32).collect(),
    })
}
