//! Small learned stand-ins for the pretrained denoising and demosaicking
//! networks. Each is a three-layer convolutional net predicting a residual:
//!
//! * Bayer denoiser: RGGB planes packed to half resolution, residual added
//!   to the packed input, unpacked again
//! * sRGB denoiser: residual on the RGB image
//! * demosaicker: packed planes in, 12 channels out, rearranged to a
//!   full-resolution RGB residual over bilinear interpolation
//!
//! Outputs are clamped to `[0, 1]`. With a zero final layer each net reduces
//! to its base mapping.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::demosaic::LinearDemosaic;
use crate::error::{Error, Result};
use crate::image::{depth_to_space, mosaic_rggb, pack_rggb, space_to_depth, unpack_rggb};
use crate::nn::{mse_with_grad, Adam, ConvNet, NetCache, Optimizer};
use crate::rng::{seeded, IspRng};
use crate::tensor::Tensor;
use crate::weights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LearnedKind {
    BayerDenoise,
    SrgbDenoise,
    Demosaic,
}

impl LearnedKind {
    pub const ALL: [LearnedKind; 3] =
        [LearnedKind::BayerDenoise, LearnedKind::SrgbDenoise, LearnedKind::Demosaic];

    pub fn as_str(self) -> &'static str {
        match self {
            LearnedKind::BayerDenoise => "learned_bayer_denoiser",
            LearnedKind::SrgbDenoise => "learned_srgb_denoiser",
            LearnedKind::Demosaic => "learned_demosaic",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn channels(self) -> (usize, usize) {
        match self {
            LearnedKind::BayerDenoise => (4, 4),
            LearnedKind::SrgbDenoise => (3, 3),
            LearnedKind::Demosaic => (4, 12),
        }
    }

    /// File name used when saving into a directory.
    pub fn file_name(self) -> String {
        format!("{}.ispw", self.as_str())
    }
}

pub const HIDDEN: usize = 16;

fn layer_spec(kind: LearnedKind) -> [(usize, usize); 3] {
    let (_, cout) = kind.channels();
    [(3, HIDDEN), (3, HIDDEN), (3, cout)]
}

/// Saved state for [`LearnedModules::backward`].
#[derive(Clone, Debug)]
pub struct LearnedCache {
    net: NetCache,
    pre_clamp: Tensor,
}

/// Weights for the three learned modules. A missing entry makes the
/// corresponding module fail with `MissingWeights`.
#[derive(Clone, Debug, Default)]
pub struct LearnedModules {
    nets: [Option<ConvNet>; 3],
}

impl LearnedModules {
    /// No weights loaded.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Freshly initialised nets; `zero_last` makes each start as its base
    /// mapping.
    pub fn initialised(seed: u64, zero_last: bool) -> Self {
        let mut rng = seeded(seed);
        let mut out = Self::default();
        for kind in LearnedKind::ALL {
            let (cin, _) = kind.channels();
            out.nets[kind.index()] = Some(ConvNet::new(cin, &layer_spec(kind), zero_last, &mut rng));
        }
        out
    }

    pub fn get(&self, kind: LearnedKind) -> Option<&ConvNet> {
        self.nets[kind.index()].as_ref()
    }

    pub fn set(&mut self, kind: LearnedKind, net: ConvNet) -> Result<()> {
        let (cin, cout) = kind.channels();
        if net.in_channels() != cin || net.out_channels() != cout {
            return Err(Error::shape(
                "LearnedModules::set",
                format!(
                    "{} needs {cin} -> {cout} channels, got {} -> {}",
                    kind.as_str(),
                    net.in_channels(),
                    net.out_channels()
                ),
            ));
        }
        self.nets[kind.index()] = Some(net);
        Ok(())
    }

    fn net(&self, kind: LearnedKind) -> Result<&ConvNet> {
        self.get(kind).ok_or_else(|| Error::MissingWeights(kind.as_str().to_string()))
    }

    /// Loads every `<module>.ispw` file present in `dir`; fails if none is.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut out = Self::default();
        for kind in LearnedKind::ALL {
            let path = dir.join(kind.file_name());
            if path.exists() {
                out.set(kind, ConvNet::from_weight_tensors(&weights::load(&path)?)?)?;
            }
        }
        if out.nets.iter().all(Option::is_none) {
            return Err(Error::MissingFile(dir.join(LearnedKind::ALL[0].file_name())));
        }
        Ok(out)
    }

    pub fn load(kind: LearnedKind, path: &Path) -> Result<ConvNet> {
        let net = ConvNet::from_weight_tensors(&weights::load(path)?)?;
        let mut probe = Self::default();
        probe.set(kind, net.clone())?;
        Ok(net)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        for kind in LearnedKind::ALL {
            if let Some(net) = self.get(kind) {
                weights::save(&dir.join(kind.file_name()), &net.to_weight_tensors())?;
            }
        }
        Ok(())
    }

    pub fn forward(&self, kind: LearnedKind, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(kind, x)?.0)
    }

    pub fn forward_cached(&self, kind: LearnedKind, x: &Tensor) -> Result<(Tensor, LearnedCache)> {
        let net = self.net(kind)?;
        let (pre_clamp, cache) = unclamped(net, kind, x)?;
        Ok((pre_clamp.clamp01(), LearnedCache { net: cache, pre_clamp }))
    }

    /// Gradient with respect to the module input.
    pub fn backward(&self, kind: LearnedKind, cache: &LearnedCache, grad_out: &Tensor) -> Result<Tensor> {
        let net = self.net(kind)?;
        let g = cache
            .pre_clamp
            .zip_map(grad_out, |v, g| if (0.0..=1.0).contains(&v) { g } else { 0.0 })?;
        Ok(unclamped_backward(net, kind, &cache.net, &g, false)?.0)
    }
}

fn check_input(kind: LearnedKind, x: &Tensor) -> Result<()> {
    let want = if kind == LearnedKind::SrgbDenoise { 3 } else { 1 };
    if x.channels() != want {
        return Err(Error::shape(
            kind.as_str(),
            format!("expected {want} channels, got {}", x.channels()),
        ));
    }
    Ok(())
}

fn unclamped(net: &ConvNet, kind: LearnedKind, x: &Tensor) -> Result<(Tensor, NetCache)> {
    check_input(kind, x)?;
    match kind {
        LearnedKind::SrgbDenoise => {
            let (r, cache) = net.forward_cached(x)?;
            Ok((x.add(&r)?, cache))
        }
        LearnedKind::BayerDenoise => {
            let packed = pack_rggb(x)?;
            let (r, cache) = net.forward_cached(&packed)?;
            Ok((unpack_rggb(&packed.add(&r)?)?, cache))
        }
        LearnedKind::Demosaic => {
            let packed = pack_rggb(x)?;
            let (r, cache) = net.forward_cached(&packed)?;
            let base = LinearDemosaic::bilinear(x.height(), x.width()).forward(x)?;
            Ok((base.add(&depth_to_space(&r)?)?, cache))
        }
    }
}

/// Gradient of the unclamped output with respect to the input and,
/// optionally, the net parameters.
fn unclamped_backward(
    net: &ConvNet,
    kind: LearnedKind,
    cache: &NetCache,
    g: &Tensor,
    want_params: bool,
) -> Result<(Tensor, Option<Vec<f32>>)> {
    match kind {
        LearnedKind::SrgbDenoise => {
            let (dx, dp) = net.backward(cache, g, want_params)?;
            Ok((dx.add(g)?, dp))
        }
        LearnedKind::BayerDenoise => {
            let gp = pack_rggb(g)?;
            let (dx, dp) = net.backward(cache, &gp, want_params)?;
            Ok((unpack_rggb(&dx.add(&gp)?)?, dp))
        }
        LearnedKind::Demosaic => {
            let (h, w, _) = g.shape();
            let (dx, dp) = net.backward(cache, &space_to_depth(g)?, want_params)?;
            let base = LinearDemosaic::bilinear(h, w).backward(g)?;
            Ok((unpack_rggb(&dx)?.add(&base)?, dp))
        }
    }
}

/// Builds `(input, target)` training pairs for `kind` from clean sRGB
/// patches. Denoisers see additive Gaussian noise of std `sigma`.
pub fn training_pairs(
    kind: LearnedKind,
    clean: &[Tensor],
    sigma: f32,
    rng: &mut IspRng,
) -> Result<Vec<(Tensor, Tensor)>> {
    let noise = Normal::new(0.0f32, sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    clean
        .iter()
        .map(|rgb| {
            let mut noisy = |t: &Tensor| {
                let mut n = t.clone();
                for v in n.data_mut() {
                    *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
                }
                n
            };
            Ok(match kind {
                LearnedKind::SrgbDenoise => (noisy(rgb), rgb.clone()),
                LearnedKind::BayerDenoise => {
                    let m = mosaic_rggb(rgb)?;
                    (noisy(&m), m)
                }
                LearnedKind::Demosaic => (mosaic_rggb(rgb)?, rgb.clone()),
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Trains `kind` with Adam on MSE over mini-batches drawn from `pairs`.
pub fn train(
    modules: &mut LearnedModules,
    kind: LearnedKind,
    pairs: &[(Tensor, Tensor)],
    steps: usize,
    batch: usize,
    lr: f32,
    seed: u64,
) -> Result<TrainReport> {
    if pairs.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut rng = seeded(seed);
    let mut net = match modules.get(kind) {
        Some(n) => n.clone(),
        None => {
            let (cin, _) = kind.channels();
            ConvNet::new(cin, &layer_spec(kind), true, &mut rng)
        }
    };
    let mut params = net.params();
    let mut opt = Adam::new(params.len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();
    let eval = |net: &ConvNet| -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in pairs {
            let (out, _) = unclamped(net, kind, x)?;
            total += mse_with_grad(&out, y)?.0;
        }
        Ok(total / pairs.len() as f64)
    };
    let initial_loss = eval(&net)?;
    for step in 0..steps {
        let mut grad = vec![0.0f32; params.len()];
        for _ in 0..batch.max(1) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (x, y) = &pairs[order[cursor]];
            cursor += 1;
            let (out, cache) = unclamped(&net, kind, x)?;
            let (_, g) = mse_with_grad(&out, y)?;
            let (_, dp) = unclamped_backward(&net, kind, &cache, &g, true)?;
            for (a, b) in grad.iter_mut().zip(dp.expect("requested")) {
                *a += b / batch.max(1) as f32;
            }
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { module: kind.as_str().into(), step });
        }
        opt.step(&mut params, &grad, lr);
        net.set_params(&params)?;
    }
    let final_loss = eval(&net)?;
    modules.set(kind, net)?;
    Ok(TrainReport { initial_loss, final_loss })
}
