//! Differentiable stand-ins for operators without a usable gradient.
//!
//! A proxy is a small convolutional net that sees the operator input, one
//! constant plane per (normalised) parameter and, for operators that depend
//! on global image content, per-channel mean and standard-deviation planes.
//! It predicts a residual over a pass-through base:
//!
//! * RAW -> RAW operators work on RGGB planes packed to half resolution so
//!   the net always knows which colour each sample carries
//! * RAW -> sRGB (demosaicking) predicts a residual over bilinear
//!   interpolation from the packed planes
//! * sRGB -> sRGB operators predict a residual over the input
//!
//! Outputs are clamped to `[0, 1]` like the operators they imitate.

mod train;

pub use train::{
    continue_training, corpus_for, holdout_examples, holdout_fidelity, sample_params, train_proxy, tune_step,
    FidelityReport, ProxyTrainConfig, ProxyTrainOutcome,
};

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{depth_to_space, pack_rggb, space_to_depth, unpack_rggb, Domain};
use crate::modules::demosaic::LinearDemosaic;
use crate::modules::{ModuleDescriptor, ModuleId};
use crate::nn::{ConvNet, NetCache};
use crate::rng::seeded;
use crate::tensor::{DifferentiableOp, OpGradient, Tensor};
use crate::weights;

/// Layer shapes `(kernel, out_channels)` of the hidden layers; the output
/// layer is appended with the kernel given by `out_kernel`.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ProxyArch {
    pub hidden: Vec<(usize, usize)>,
    pub out_kernel: usize,
}

impl ProxyArch {
    /// Three-layer SRCNN shape: 9x9x64, 5x5x32, 5x5xC.
    pub fn srcnn() -> Self {
        Self { hidden: vec![(9, 64), (5, 32)], out_kernel: 5 }
    }

    /// A much cheaper net for quick runs and tests: 5x5x16, 3x3x16, 3x3xC.
    pub fn compact() -> Self {
        Self { hidden: vec![(5, 16), (3, 16)], out_kernel: 3 }
    }

    fn layers(&self, out_channels: usize) -> Vec<(usize, usize)> {
        let mut l = self.hidden.clone();
        l.push((self.out_kernel, out_channels));
        l
    }
}

impl Default for ProxyArch {
    fn default() -> Self {
        Self::srcnn()
    }
}

/// How a proxy maps between the operator's tensors and its net.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProxyLayout {
    pub packed: bool,
    pub image_channels: usize,
    pub params: usize,
    pub stats: bool,
    pub out_domain: Domain,
}

impl ProxyLayout {
    pub fn for_descriptor(desc: &ModuleDescriptor) -> Result<Self> {
        let (Some(din), Some(dout)) = (desc.domain_in, desc.domain_out) else {
            return Err(Error::Config(format!("{} has no fixed domain", desc.id)));
        };
        let packed = din == Domain::BayerRaw;
        Ok(Self {
            packed,
            image_channels: if packed { 4 } else { din.channels() },
            params: desc.param_count(),
            stats: desc.needs_stats,
            out_domain: dout,
        })
    }

    pub fn net_in(&self) -> usize {
        self.image_channels + self.params + if self.stats { 2 * self.image_channels } else { 0 }
    }

    pub fn net_out(&self) -> usize {
        match (self.packed, self.out_domain) {
            (true, Domain::Srgb) => 12,
            _ => self.image_channels,
        }
    }
}

/// Concatenates `[image | parameter planes | mean planes | std planes]`.
/// Statistics are per-channel population mean and standard deviation.
pub fn build_proxy_input(image: &Tensor, params: &[f32], needs_stats: bool) -> Tensor {
    let (h, w, c) = image.shape();
    let stats = if needs_stats { image.channel_stats() } else { Vec::new() };
    let extra: Vec<f32> = params
        .iter()
        .copied()
        .chain(stats.iter().map(|&(m, _)| m as f32))
        .chain(stats.iter().map(|&(_, s)| s as f32))
        .collect();
    let total = c + extra.len();
    let mut data = Vec::with_capacity(h * w * total);
    for px in image.data().chunks_exact(c) {
        data.extend_from_slice(px);
        data.extend_from_slice(&extra);
    }
    Tensor::from_vec(h, w, total, data).expect("consistent size")
}

/// A trained (or freshly initialised) proxy for one module.
#[derive(Clone, Debug)]
pub struct ProxyNet {
    pub module: ModuleId,
    pub layout: ProxyLayout,
    pub net: ConvNet,
    /// Optimisation steps this net has seen; zero means untrained.
    pub trained_steps: usize,
}

/// State saved by a cached forward pass.
#[derive(Clone, Debug)]
pub struct ProxyCache {
    net: NetCache,
    image: Tensor,
    pre_clamp: Tensor,
    out_shape: (usize, usize, usize),
}

/// Gradients of a proxy with respect to its input, parameters and weights.
#[derive(Clone, Debug)]
pub struct ProxyGrad {
    pub input: Tensor,
    pub params: Vec<f32>,
    pub weights: Option<Vec<f32>>,
}

impl ProxyNet {
    /// Random initialisation with a zero output layer, so an untrained proxy
    /// is exactly its base mapping.
    pub fn new(module: ModuleId, arch: &ProxyArch, seed: u64) -> Result<Self> {
        Self::init(module, arch, seed, true)
    }

    /// Random initialisation of every layer (used by gradient tests).
    pub fn random(module: ModuleId, arch: &ProxyArch, seed: u64) -> Result<Self> {
        Self::init(module, arch, seed, false)
    }

    fn init(module: ModuleId, arch: &ProxyArch, seed: u64, zero_last: bool) -> Result<Self> {
        let desc = module.descriptor();
        if !desc.needs_proxy() {
            return Err(Error::Config(format!("{module} is differentiable and needs no proxy")));
        }
        let layout = ProxyLayout::for_descriptor(desc)?;
        let mut rng = seeded(seed);
        let net = ConvNet::new(layout.net_in(), &arch.layers(layout.net_out()), zero_last, &mut rng);
        Ok(Self { module, layout, net, trained_steps: 0 })
    }

    pub fn from_net(module: ModuleId, net: ConvNet, trained_steps: usize) -> Result<Self> {
        let layout = ProxyLayout::for_descriptor(module.descriptor())?;
        if net.in_channels() != layout.net_in() || net.out_channels() != layout.net_out() {
            return Err(Error::shape(
                "ProxyNet::from_net",
                format!(
                    "{module} proxy needs {} -> {} channels, weights have {} -> {}",
                    layout.net_in(),
                    layout.net_out(),
                    net.in_channels(),
                    net.out_channels()
                ),
            ));
        }
        Ok(Self { module, layout, net, trained_steps })
    }

    /// `<module>.ispw`.
    pub fn file_name(module: ModuleId) -> String {
        format!("{module}.ispw")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        weights::save(path, &self.net.to_weight_tensors())
    }

    pub fn load(module: ModuleId, path: &Path) -> Result<Self> {
        let net = ConvNet::from_weight_tensors(&weights::load(path)?)?;
        Self::from_net(module, net, 1)
    }

    fn check_input(&self, x: &Tensor, params: &[f32]) -> Result<()> {
        let want_c = if self.layout.packed { 1 } else { self.layout.image_channels };
        if x.channels() != want_c {
            return Err(Error::shape(
                "proxy",
                format!("{} proxy expects {want_c} channels, got {}", self.module, x.channels()),
            ));
        }
        if params.len() != self.layout.params {
            return Err(Error::shape(
                "proxy",
                format!("{} takes {} parameters, got {}", self.module, self.layout.params, params.len()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor, params: &[f32]) -> Result<Tensor> {
        Ok(self.forward_cached(x, params)?.0)
    }

    /// Output before the final clamp.
    pub fn forward_unclamped(&self, x: &Tensor, params: &[f32]) -> Result<(Tensor, ProxyCache)> {
        self.check_input(x, params)?;
        let image = if self.layout.packed { pack_rggb(x)? } else { x.clone() };
        let input = build_proxy_input(&image, params, self.layout.stats);
        let (r, net) = self.net.forward_cached(&input)?;
        let pre_clamp = match (self.layout.packed, self.layout.out_domain) {
            (true, Domain::BayerRaw) => unpack_rggb(&image.add(&r)?)?,
            (true, Domain::Srgb) => {
                let base = LinearDemosaic::bilinear(x.height(), x.width()).forward(x)?;
                base.add(&depth_to_space(&r)?)?
            }
            (false, _) => x.add(&r)?,
        };
        let out_shape = pre_clamp.shape();
        Ok((pre_clamp.clone(), ProxyCache { net, image, pre_clamp, out_shape }))
    }

    pub fn forward_cached(&self, x: &Tensor, params: &[f32]) -> Result<(Tensor, ProxyCache)> {
        let (pre, cache) = self.forward_unclamped(x, params)?;
        Ok((pre.clamp01(), cache))
    }

    /// Backward through the clamped output.
    pub fn backward(&self, cache: &ProxyCache, grad_out: &Tensor, want_weights: bool) -> Result<ProxyGrad> {
        let g = cache
            .pre_clamp
            .zip_map(grad_out, |v, g| if (0.0..=1.0).contains(&v) { g } else { 0.0 })?;
        self.backward_unclamped(cache, &g, want_weights)
    }

    /// Backward through the unclamped output.
    pub fn backward_unclamped(
        &self,
        cache: &ProxyCache,
        grad_out: &Tensor,
        want_weights: bool,
    ) -> Result<ProxyGrad> {
        if grad_out.shape() != cache.out_shape {
            return Err(Error::shape(
                "proxy backward",
                format!("gradient {:?} for output {:?}", grad_out.shape(), cache.out_shape),
            ));
        }
        let layout = &self.layout;
        let (g_net, direct) = match (layout.packed, layout.out_domain) {
            (true, Domain::BayerRaw) => {
                let gp = pack_rggb(grad_out)?;
                (gp.clone(), Some(gp))
            }
            (true, Domain::Srgb) => (space_to_depth(grad_out)?, None),
            (false, _) => (grad_out.clone(), Some(grad_out.clone())),
        };
        let (d_in, weights) = self.net.backward(&cache.net, &g_net, want_weights)?;
        let c = layout.image_channels;
        let (h, w, _) = d_in.shape();
        let n = (h * w) as f64;

        let mut plane_sums = vec![0.0f64; d_in.channels() - c];
        for px in d_in.data().chunks_exact(d_in.channels()) {
            for (s, &v) in plane_sums.iter_mut().zip(&px[c..]) {
                *s += v as f64;
            }
        }
        let params: Vec<f32> = plane_sums[..layout.params].iter().map(|&v| v as f32).collect();

        let mut d_img = d_in.slice_channels(0, c);
        if let Some(direct) = &direct {
            d_img.axpy(1.0, direct)?;
        }
        if layout.stats {
            let stats = cache.image.channel_stats();
            let d_mean = &plane_sums[layout.params..layout.params + c];
            let d_std = &plane_sums[layout.params + c..];
            for (px, src) in d_img.data_mut().chunks_exact_mut(c).zip(cache.image.data().chunks_exact(c)) {
                for ch in 0..c {
                    let (m, s) = stats[ch];
                    let mut d = d_mean[ch] / n;
                    if s > 0.0 {
                        d += d_std[ch] * (src[ch] as f64 - m) / (n * s);
                    }
                    px[ch] += d as f32;
                }
            }
        }
        let input = match (layout.packed, layout.out_domain) {
            (true, Domain::BayerRaw) => unpack_rggb(&d_img)?,
            (true, Domain::Srgb) => {
                let (oh, ow, _) = cache.out_shape;
                unpack_rggb(&d_img)?.add(&LinearDemosaic::bilinear(oh, ow).backward(grad_out)?)?
            }
            (false, _) => d_img,
        };
        Ok(ProxyGrad { input, params, weights })
    }
}

impl DifferentiableOp for ProxyNet {
    type Cache = ProxyCache;

    fn name(&self) -> String {
        format!("proxy:{}", self.module)
    }

    fn forward(&self, input: &Tensor, params: &[f32]) -> Result<(Tensor, ProxyCache)> {
        self.forward_cached(input, params)
    }

    fn backward(&self, cache: ProxyCache, grad_out: &Tensor) -> Result<OpGradient> {
        let g = ProxyNet::backward(self, &cache, grad_out, false)?;
        Ok(OpGradient { input: g.input, params: g.params })
    }
}

/// One proxy per module that needs one.
#[derive(Clone, Debug, Default)]
pub struct ProxySet {
    pub nets: Vec<ProxyNet>,
}

impl ProxySet {
    /// Untrained proxies for every listed module that needs one.
    pub fn untrained(modules: &[ModuleId], arch: &ProxyArch, seed: u64) -> Result<Self> {
        let nets = modules
            .iter()
            .filter(|m| m.descriptor().needs_proxy())
            .map(|&m| ProxyNet::new(m, arch, seed ^ (m.pool_index() as u64 + 1) * 0x9e37_79b9))
            .collect::<Result<_>>()?;
        Ok(Self { nets })
    }

    pub fn get(&self, module: ModuleId) -> Option<&ProxyNet> {
        self.nets.iter().find(|p| p.module == module)
    }

    pub fn get_mut(&mut self, module: ModuleId) -> Option<&mut ProxyNet> {
        self.nets.iter_mut().find(|p| p.module == module)
    }

    pub fn insert(&mut self, proxy: ProxyNet) {
        match self.get_mut(proxy.module) {
            Some(slot) => *slot = proxy,
            None => self.nets.push(proxy),
        }
    }

    pub fn require(&self, module: ModuleId) -> Result<&ProxyNet> {
        self.get(module).ok_or_else(|| Error::MissingWeights(format!("proxy:{module}")))
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        for p in &self.nets {
            p.save(&dir.join(ProxyNet::file_name(p.module)))?;
        }
        Ok(())
    }

    /// Loads a proxy for each module in `modules` that needs one; every file
    /// must be present.
    pub fn load_dir(dir: &Path, modules: &[ModuleId]) -> Result<Self> {
        let mut set = Self::default();
        for &m in modules.iter().filter(|m| m.descriptor().needs_proxy()) {
            set.insert(ProxyNet::load(m, &dir.join(ProxyNet::file_name(m)))?);
        }
        Ok(set)
    }
}
