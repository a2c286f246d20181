//! RGGB demosaicing: nearest-neighbour, bilinear and gradient-corrected
//! (Hamilton-Adams style) interpolation.
//!
//! Nearest and bilinear are linear maps and are represented as sparse tap
//! lists so their adjoint (the backward pass) is exact.

use crate::error::{Error, Result};
use crate::image::bayer_color;
use crate::tensor::{reflect, Tensor};

fn check_mosaic(x: &Tensor, op: &'static str) -> Result<()> {
    let (h, w, c) = x.shape();
    if c != 1 || h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
        return Err(Error::shape(
            op,
            format!("need an even-sized single-channel mosaic, got {h}x{w}x{c}"),
        ));
    }
    Ok(())
}

/// Sparse linear operator from a mosaic to an RGB image.
#[derive(Clone, Debug)]
pub struct LinearDemosaic {
    height: usize,
    width: usize,
    /// `(output index, input index, weight)`
    taps: Vec<(u32, u32, f32)>,
}

impl LinearDemosaic {
    fn build(h: usize, w: usize, taps_for: impl Fn(usize, usize, usize) -> Vec<(isize, isize, f32)>) -> Self {
        let mut taps = Vec::with_capacity(h * w * 3 * 4);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let o = ((y * w + x) * 3 + c) as u32;
                    for (sy, sx, wt) in taps_for(y, x, c) {
                        let i = reflect(sy, h) * w + reflect(sx, w);
                        taps.push((o, i as u32, wt));
                    }
                }
            }
        }
        LinearDemosaic {
            height: h,
            width: w,
            taps,
        }
    }

    pub fn nearest(h: usize, w: usize) -> Self {
        Self::build(h, w, |y, x, c| {
            let (y, x) = (y as isize, x as isize);
            let (cy, cx) = (y & !1, x & !1);
            let src = match c {
                0 => (cy, cx),
                2 => (cy + 1, cx + 1),
                _ => match bayer_color(y as usize, x as usize) {
                    1 => (y, x),
                    0 => (y, x + 1),
                    _ => (y, x - 1),
                },
            };
            vec![(src.0, src.1, 1.0)]
        })
    }

    pub fn bilinear(h: usize, w: usize) -> Self {
        Self::build(h, w, |y, x, c| {
            let site = bayer_color(y, x);
            let (y, x) = (y as isize, x as isize);
            if site == c {
                vec![(y, x, 1.0)]
            } else if c == 1 {
                vec![
                    (y - 1, x, 0.25),
                    (y + 1, x, 0.25),
                    (y, x - 1, 0.25),
                    (y, x + 1, 0.25),
                ]
            } else if site == 1 {
                if bayer_color(y as usize % 2, (x as usize + 1) % 2) == c {
                    vec![(y, x - 1, 0.5), (y, x + 1, 0.5)]
                } else {
                    vec![(y - 1, x, 0.5), (y + 1, x, 0.5)]
                }
            } else {
                vec![
                    (y - 1, x - 1, 0.25),
                    (y - 1, x + 1, 0.25),
                    (y + 1, x - 1, 0.25),
                    (y + 1, x + 1, 0.25),
                ]
            }
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_mosaic(x, "demosaic")?;
        if x.height() != self.height || x.width() != self.width {
            return Err(Error::shape("demosaic", "operator built for a different size"));
        }
        let src = x.data();
        let mut out = vec![0.0f32; self.height * self.width * 3];
        for &(o, i, wt) in &self.taps {
            out[o as usize] += wt * src[i as usize];
        }
        Tensor::from_vec(self.height, self.width, 3, out)
    }

    /// Adjoint: maps an RGB gradient back onto the mosaic.
    pub fn backward(&self, grad: &Tensor) -> Result<Tensor> {
        if grad.shape() != (self.height, self.width, 3) {
            return Err(Error::shape("demosaic backward", format!("{:?}", grad.shape())));
        }
        let g = grad.data();
        let mut out = vec![0.0f32; self.height * self.width];
        for &(o, i, wt) in &self.taps {
            out[i as usize] += wt * g[o as usize];
        }
        Tensor::from_vec(self.height, self.width, 1, out)
    }
}

pub fn nearest(x: &Tensor) -> Result<Tensor> {
    check_mosaic(x, "nearest")?;
    LinearDemosaic::nearest(x.height(), x.width()).forward(x)
}

pub fn bilinear(x: &Tensor) -> Result<Tensor> {
    check_mosaic(x, "bilinear")?;
    LinearDemosaic::bilinear(x.height(), x.width()).forward(x)
}

/// Gradient-corrected interpolation: green is interpolated along the
/// direction with the smaller gradient plus a Laplacian correction from the
/// co-sited colour; red and blue are interpolated as colour differences
/// against the completed green plane.
pub fn laplacian(x: &Tensor) -> Result<Tensor> {
    check_mosaic(x, "laplacian")?;
    let (h, w, _) = x.shape();
    let at = |y: isize, xx: isize| x.at(reflect(y, h), reflect(xx, w), 0);

    let mut green = Tensor::zeros(h, w, 1);
    for y in 0..h as isize {
        for xx in 0..w as isize {
            let v = at(y, xx);
            let g = if bayer_color(y as usize, xx as usize) == 1 {
                v
            } else {
                let lap_h = 2.0 * v - at(y, xx - 2) - at(y, xx + 2);
                let lap_v = 2.0 * v - at(y - 2, xx) - at(y + 2, xx);
                let grad_h = (at(y, xx - 1) - at(y, xx + 1)).abs() + lap_h.abs();
                let grad_v = (at(y - 1, xx) - at(y + 1, xx)).abs() + lap_v.abs();
                let est_h = 0.5 * (at(y, xx - 1) + at(y, xx + 1)) + 0.25 * lap_h;
                let est_v = 0.5 * (at(y - 1, xx) + at(y + 1, xx)) + 0.25 * lap_v;
                if grad_h < grad_v {
                    est_h
                } else if grad_v < grad_h {
                    est_v
                } else {
                    0.5 * (est_h + est_v)
                }
            };
            green.set(y as usize, xx as usize, 0, g);
        }
    }
    let g_at = |y: isize, xx: isize| green.at(reflect(y, h), reflect(xx, w), 0);
    // colour difference C - G at a site of colour `c`
    let diff = |y: isize, xx: isize| at(y, xx) - g_at(y, xx);

    let mut out = Tensor::zeros(h, w, 3);
    for y in 0..h as isize {
        for xx in 0..w as isize {
            let site = bayer_color(y as usize, xx as usize);
            let g = g_at(y, xx);
            for c in [0usize, 2] {
                let v = if site == c {
                    at(y, xx)
                } else if site == 1 {
                    // horizontal neighbours carry colour c on this row?
                    let horizontal = bayer_color(y as usize, reflect(xx + 1, w)) == c;
                    let d = if horizontal {
                        0.5 * (diff(y, xx - 1) + diff(y, xx + 1))
                    } else {
                        0.5 * (diff(y - 1, xx) + diff(y + 1, xx))
                    };
                    g + d
                } else {
                    let d = 0.25
                        * (diff(y - 1, xx - 1)
                            + diff(y - 1, xx + 1)
                            + diff(y + 1, xx - 1)
                            + diff(y + 1, xx + 1));
                    g + d
                };
                out.set(y as usize, xx as usize, c, v.clamp(0.0, 1.0));
            }
            out.set(y as usize, xx as usize, 1, g.clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn all_kinds(x: &Tensor) -> Vec<Tensor> {
        vec![nearest(x).unwrap(), bilinear(x).unwrap(), laplacian(x).unwrap()]
    }

    #[test]
    fn constant_mosaic_gives_gray() {
        let x = Tensor::filled(8, 8, 1, 0.35);
        for out in all_kinds(&x) {
            assert!(out.max_abs_diff(&Tensor::filled(8, 8, 3, 0.35)).unwrap() < 1e-7);
        }
    }

    #[test]
    fn nearest_matches_enumeration() {
        let x = Tensor::from_fn(4, 4, 1, |y, xx, _| (y * 4 + xx) as f32 / 16.0);
        let out = nearest(&x).unwrap();
        for y in 0..4usize {
            for xx in 0..4usize {
                let (cy, cx) = (y & !1, xx & !1);
                for c in 0..3 {
                    // nearest same-colour sample inside the 2x2 cell; ties
                    // prefer the same row
                    let mut best: Option<(usize, usize, usize)> = None;
                    for sy in cy..cy + 2 {
                        for sx in cx..cx + 2 {
                            if bayer_color(sy, sx) != c {
                                continue;
                            }
                            let d = sy.abs_diff(y) * sy.abs_diff(y) + sx.abs_diff(xx) * sx.abs_diff(xx);
                            let rank = d * 2 + usize::from(sy != y);
                            if best.is_none_or(|b| rank < b.0) {
                                best = Some((rank, sy, sx));
                            }
                        }
                    }
                    let (_, sy, sx) = best.unwrap();
                    assert_eq!(out.at(y, xx, c), x.at(sy, sx, 0), "({y},{xx}) c{c}");
                }
            }
        }
    }

    #[test]
    fn bilinear_reproduces_horizontal_ramp() {
        let x = Tensor::from_fn(8, 10, 1, |_, xx, _| 0.1 + 0.05 * xx as f32);
        let out = bilinear(&x).unwrap();
        for y in 1..7 {
            for xx in 1..9 {
                for c in 0..3 {
                    let want = 0.1 + 0.05 * xx as f32;
                    assert!((out.at(y, xx, c) - want).abs() < 1e-6, "({y},{xx},{c})");
                }
            }
        }
    }

    #[test]
    fn odd_dimensions_rejected() {
        let x = Tensor::zeros(5, 4, 1);
        assert!(nearest(&x).is_err());
        assert!(bilinear(&x).is_err());
        assert!(laplacian(&x).is_err());
    }

    #[test]
    fn backward_is_adjoint() {
        let mut rng = seeded(7);
        let x = Tensor::from_fn(6, 8, 1, |_, _, _| rng.random());
        let g = Tensor::from_fn(6, 8, 3, |_, _, _| rng.random());
        for op in [LinearDemosaic::nearest(6, 8), LinearDemosaic::bilinear(6, 8)] {
            let lhs = op.forward(&x).unwrap().dot(&g).unwrap();
            let rhs = x.dot(&op.backward(&g).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-5);
        }
    }

    #[test]
    fn laplacian_beats_bilinear_on_edges() {
        // vertical edge in a gray scene
        let rgb = |xx: usize| if xx < 5 { 0.2 } else { 0.8 };
        let x = Tensor::from_fn(10, 10, 1, |_, xx, _| rgb(xx));
        let truth = Tensor::from_fn(10, 10, 3, |_, xx, _| rgb(xx));
        let err = |t: &Tensor| t.sub(&truth).unwrap().map(|v| v * v).mean();
        assert!(err(&laplacian(&x).unwrap()) < err(&bilinear(&x).unwrap()));
    }
}
