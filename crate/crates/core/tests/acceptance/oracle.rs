//! Double-precision reference implementations used as finite-difference
//! oracles. Written from the operator definitions, independent of the
//! crate's f32 kernels; only weights and parameter ranges are shared.

use ispsearch::image::Domain;
use ispsearch::modules::{LearnedKind, ModuleId};
use ispsearch::nn::ConvNet;
use ispsearch::supernet::{learned_kind, SearchModules, SuperNet};
use ispsearch::tensor::Padding;
use ispsearch::Tensor;

#[derive(Clone, Debug)]
pub struct T {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub d: Vec<f64>,
}

impl T {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        T { h, w, c, d: vec![0.0; h * w * c] }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let (h, w, c) = t.shape();
        T { h, w, c, d: t.data().iter().map(|&v| v as f64).collect() }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.d[(y * self.w + x) * self.c + c]
    }

    fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.d[(y * self.w + x) * self.c + c] = v;
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> T {
        T { d: self.d.iter().map(|&v| f(v)).collect(), ..*self }
    }

    fn add(&self, o: &T) -> T {
        assert_eq!((self.h, self.w, self.c), (o.h, o.w, o.c));
        T { d: self.d.iter().zip(&o.d).map(|(a, b)| a + b).collect(), ..*self }
    }

    pub fn clamp01(&self) -> T {
        self.map(|v| v.clamp(0.0, 1.0))
    }
}

/// Mirror without repeating the edge sample.
fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

fn color(y: usize, x: usize) -> usize {
    match (y % 2, x % 2) {
        (0, 0) => 0,
        (1, 1) => 2,
        _ => 1,
    }
}

fn conv(x: &T, layer: &ispsearch::tensor::Conv2d) -> T {
    let k = layer.kernel as isize;
    let half = k / 2;
    let mut out = T::zeros(x.h, x.w, layer.out_channels);
    for y in 0..x.h {
        for xx in 0..x.w {
            for co in 0..layer.out_channels {
                let mut acc = layer.bias[co] as f64;
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = y as isize + ky - half;
                        let sx = xx as isize + kx - half;
                        let (sy, sx) = match layer.padding {
                            Padding::Reflect => (mirror(sy, x.h), mirror(sx, x.w)),
                            Padding::Zero => {
                                if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                    continue;
                                }
                                (sy as usize, sx as usize)
                            }
                        };
                        for ci in 0..layer.in_channels {
                            let wi = ((ky as usize * layer.kernel + kx as usize) * layer.in_channels + ci)
                                * layer.out_channels
                                + co;
                            acc += layer.weight[wi] as f64 * x.at(sy, sx, ci);
                        }
                    }
                }
                out.set(y, xx, co, acc);
            }
        }
    }
    out
}

fn net(n: &ConvNet, x: &T) -> T {
    let mut h = x.clone();
    for (i, layer) in n.layers.iter().enumerate() {
        h = conv(&h, layer);
        if i + 1 < n.layers.len() {
            h = h.map(|v| v.max(0.0));
        }
    }
    h
}

fn pack(m: &T) -> T {
    let mut out = T::zeros(m.h / 2, m.w / 2, 4);
    for y in 0..m.h {
        for x in 0..m.w {
            out.set(y / 2, x / 2, (y % 2) * 2 + x % 2, m.at(y, x, 0));
        }
    }
    out
}

fn unpack(p: &T) -> T {
    let mut out = T::zeros(p.h * 2, p.w * 2, 1);
    for y in 0..out.h {
        for x in 0..out.w {
            out.set(y, x, 0, p.at(y / 2, x / 2, (y % 2) * 2 + x % 2));
        }
    }
    out
}

/// Full-resolution RGB from a 12-channel half-resolution tensor laid out
/// as four 2x2 sites of three channels each.
fn to_full_rgb(t: &T) -> T {
    let mut out = T::zeros(t.h * 2, t.w * 2, 3);
    for y in 0..out.h {
        for x in 0..out.w {
            for c in 0..3 {
                out.set(y, x, c, t.at(y / 2, x / 2, ((y % 2) * 2 + x % 2) * 3 + c));
            }
        }
    }
    out
}

pub fn bilinear(m: &T) -> T {
    let (h, w) = (m.h, m.w);
    let s = |y: isize, x: isize| m.at(mirror(y, h), mirror(x, w), 0);
    let mut out = T::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            let site = color(y, x);
            for c in 0..3 {
                let v = if site == c {
                    s(yi, xi)
                } else if c == 1 {
                    (s(yi - 1, xi) + s(yi + 1, xi) + s(yi, xi - 1) + s(yi, xi + 1)) / 4.0
                } else if site == 1 {
                    if color(y, x + 1) == c {
                        (s(yi, xi - 1) + s(yi, xi + 1)) / 2.0
                    } else {
                        (s(yi - 1, xi) + s(yi + 1, xi)) / 2.0
                    }
                } else {
                    (s(yi - 1, xi - 1) + s(yi - 1, xi + 1) + s(yi + 1, xi - 1) + s(yi + 1, xi + 1)) / 4.0
                };
                out.set(y, x, c, v);
            }
        }
    }
    out
}

/// Each 2x2 block shares its red and blue sample; green sites keep their
/// own value and red/blue sites borrow the green next to them in the row.
pub fn nearest(m: &T) -> T {
    let (h, w) = (m.h, m.w);
    let s = |y: isize, x: isize| m.at(mirror(y, h), mirror(x, w), 0);
    let mut out = T::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let (by, bx) = ((y - y % 2) as isize, (x - x % 2) as isize);
            let (yi, xi) = (y as isize, x as isize);
            let g = match color(y, x) {
                1 => s(yi, xi),
                0 => s(yi, xi + 1),
                _ => s(yi, xi - 1),
            };
            out.set(y, x, 0, s(by, bx));
            out.set(y, x, 1, g);
            out.set(y, x, 2, s(by + 1, bx + 1));
        }
    }
    out
}

fn channel_mean_std(x: &T) -> Vec<(f64, f64)> {
    let n = (x.h * x.w) as f64;
    (0..x.c)
        .map(|c| {
            let vals: Vec<f64> = x.d.iter().skip(c).step_by(x.c).copied().collect();
            let m = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            (m, var.sqrt())
        })
        .collect()
}

fn actual(module: ModuleId, p: &[f64]) -> Vec<f64> {
    module
        .descriptor()
        .params
        .iter()
        .zip(p)
        .map(|(s, &v)| s.min as f64 + v.clamp(0.0, 1.0) * (s.max as f64 - s.min as f64))
        .collect()
}

fn learned(n: &ConvNet, kind: LearnedKind, x: &T) -> T {
    let pre = match kind {
        LearnedKind::SrgbDenoise => x.add(&net(n, x)),
        LearnedKind::BayerDenoise => {
            let p = pack(x);
            unpack(&p.add(&net(n, &p)))
        }
        LearnedKind::Demosaic => bilinear(x).add(&to_full_rgb(&net(n, &pack(x)))),
    };
    pre.clamp01()
}

fn proxy(module: ModuleId, mods: &SearchModules, x: &T, p: &[f64]) -> T {
    let px = mods.proxies.get(module).expect("proxy present");
    let desc = module.descriptor();
    let packed = desc.domain_in == Some(Domain::BayerRaw);
    let image = if packed { pack(x) } else { x.clone() };
    let stats = if desc.needs_stats { channel_mean_std(&image) } else { Vec::new() };
    let extra: Vec<f64> = p
        .iter()
        .copied()
        .chain(stats.iter().map(|s| s.0))
        .chain(stats.iter().map(|s| s.1))
        .collect();
    let mut input = T::zeros(image.h, image.w, image.c + extra.len());
    for y in 0..image.h {
        for xx in 0..image.w {
            for c in 0..image.c {
                input.set(y, xx, c, image.at(y, xx, c));
            }
            for (i, &v) in extra.iter().enumerate() {
                input.set(y, xx, image.c + i, v);
            }
        }
    }
    let r = net(&px.net, &input);
    let pre = match (packed, desc.domain_out) {
        (true, Some(Domain::BayerRaw)) => unpack(&image.add(&r)),
        (true, _) => bilinear(x).add(&to_full_rgb(&r)),
        (false, _) => x.add(&r),
    };
    pre.clamp01()
}

fn manual(x: &T, knots: &[f64]) -> T {
    let mut k = knots.to_vec();
    k.sort_by(f64::total_cmp);
    let ys = [0.0, k[0].clamp(0.0, 1.0), k[1].clamp(0.0, 1.0), k[2].clamp(0.0, 1.0), 1.0];
    x.map(|v| {
        let v = v.clamp(0.0, 1.0);
        let seg = ((4.0 * v).floor() as usize).min(3);
        let t = 4.0 * v - seg as f64;
        ys[seg] * (1.0 - t) + ys[seg + 1] * t
    })
}

fn grayworld(x: &T) -> T {
    let means: Vec<f64> = channel_mean_std(x).into_iter().map(|s| s.0).collect();
    let global = means.iter().sum::<f64>() / means.len() as f64;
    let mut out = x.clone();
    for (i, v) in out.d.iter_mut().enumerate() {
        let m = means[i % x.c];
        if m.abs() > 1e-8 {
            *v *= global / m;
        }
    }
    out
}

fn quadratic(x: &T, a: &[f64]) -> T {
    let mut out = x.clone();
    for px in out.d.chunks_exact_mut(3) {
        let (r, g, b) = (px[0], px[1], px[2]);
        let f = [r, g, b, r * r, g * g, b * b, r * g, r * b, g * b, 1.0];
        for c in 0..3 {
            px[c] = (0..10).map(|i| f[i] * a[10 * c + i]).sum();
        }
    }
    out
}

/// Output of one module in the form the search uses: analytic modules
/// unclamped, learned nets and proxies clamped to `[0, 1]`.
pub fn apply(module: ModuleId, mods: &SearchModules, x: &T, p: &[f64]) -> T {
    if module.descriptor().needs_proxy() {
        return proxy(module, mods, x, p);
    }
    if let Some(kind) = learned_kind(module) {
        return learned(mods.learned.get(kind).expect("learned weights present"), kind, x);
    }
    let a = actual(module, p);
    match module {
        ModuleId::Skip => x.clone(),
        ModuleId::Nearest => nearest(x),
        ModuleId::Bilinear => bilinear(x),
        ModuleId::Gamma => x.map(|v| v.clamp(0.0, 1.0).powf(a[0])),
        ModuleId::Manual => manual(x, &a),
        ModuleId::Grayworld => grayworld(x),
        ModuleId::Linear => {
            let mut out = x.clone();
            for (i, v) in out.d.iter_mut().enumerate() {
                *v *= a[i % 3];
            }
            out
        }
        ModuleId::Quadratic => quadratic(x, &a),
        other => panic!("no oracle for {other}"),
    }
}

/// Parameters of a super-network in double precision: per-slot normalised
/// parameters and logits.
#[derive(Clone, Debug)]
pub struct NetState {
    pub params: Vec<Vec<Vec<f64>>>,
    pub logits: Vec<Vec<f64>>,
}

impl NetState {
    pub fn of(net: &SuperNet) -> Self {
        NetState {
            params: net
                .steps
                .iter()
                .map(|s| s.slots.iter().map(|sl| sl.params.iter().map(|&v| v as f64).collect()).collect())
                .collect(),
            logits: net
                .steps
                .iter()
                .map(|s| s.slots.iter().map(|sl| sl.logit as f64).collect())
                .collect(),
        }
    }
}

/// Softmax-weighted mixture of every valid slot at every step, clamped at
/// the end.
pub fn supernet(net: &SuperNet, state: &NetState, x: &T) -> T {
    let mut cur = x.clone();
    for (k, step) in net.steps.iter().enumerate() {
        let valid: Vec<usize> = (0..step.slots.len()).filter(|&j| step.slots[j].valid).collect();
        let zmax = valid.iter().map(|&j| state.logits[k][j]).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = valid.iter().map(|&j| (state.logits[k][j] - zmax).exp()).sum();
        let mut mix: Option<T> = None;
        for &j in &valid {
            let a = (state.logits[k][j] - zmax).exp() / total;
            if a == 0.0 {
                continue;
            }
            let y = apply(step.slots[j].module, &net.modules, &cur, &state.params[k][j]).map(|v| v * a);
            mix = Some(match mix {
                None => y,
                Some(m) => m.add(&y),
            });
        }
        cur = mix.expect("a branch with positive weight");
    }
    cur.clamp01()
}

pub fn project(y: &T, w: &[f64]) -> f64 {
    y.d.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Central difference of `f` at `v[i]`.
pub fn central(v: &mut [f64], i: usize, eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = v[i];
    v[i] = orig + eps;
    let up = f(v);
    v[i] = orig - eps;
    let down = f(v);
    v[i] = orig;
    (up - down) / (2.0 * eps)
}
