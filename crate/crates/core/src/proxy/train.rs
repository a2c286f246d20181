use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ProxyArch, ProxyNet};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::psnr_from_mse;
use crate::modules::{apply_original, LearnedModules, ModuleDescriptor, ModuleId, ParamVector};
use crate::nn::{mse_with_grad, Adam, Optimizer};
use crate::rng::{seeded, stream, IspRng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyTrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Square patch side; odd values are rounded down to even.
    pub patch: usize,
    pub lr: f32,
    pub arch: ProxyArch,
    /// Number of evenly spaced held-out evaluations during training.
    pub checkpoints: usize,
    /// Held-out `(patch, params)` pairs used for fidelity.
    pub holdout: usize,
}

impl Default for ProxyTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 16,
            patch: 64,
            lr: 1e-3,
            arch: ProxyArch::srcnn(),
            checkpoints: 5,
            holdout: 16,
        }
    }
}

/// One fidelity record: held-out PSNR of proxy output against the original
/// operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub module_id: String,
    pub psnr: f64,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct ProxyTrainOutcome {
    pub proxy: ProxyNet,
    pub report: FidelityReport,
    /// `(step, held-out PSNR)` at each checkpoint.
    pub checkpoints: Vec<(usize, f64)>,
    pub first_loss: f64,
    pub last_loss: f64,
    /// Step at which the loss became non-finite; the returned proxy holds
    /// the last finite weights.
    pub diverged_at: Option<usize>,
}

/// Training images for `module`: the sRGB corpus itself, or its RGGB
/// mosaics for Bayer-domain modules.
pub fn corpus_for(module: ModuleId, rgb: &[Tensor]) -> Result<Vec<Tensor>> {
    match module.descriptor().domain_in {
        Some(crate::image::Domain::BayerRaw) => rgb.iter().map(crate::image::mosaic_rggb).collect(),
        _ => Ok(rgb.to_vec()),
    }
}

/// Uniform random normalised parameters.
pub fn sample_params(desc: &ModuleDescriptor, rng: &mut IspRng) -> Vec<f32> {
    (0..desc.param_count()).map(|_| rng.random::<f32>()).collect()
}

fn random_patch(img: &Tensor, patch: usize, rng: &mut IspRng) -> Result<Tensor> {
    let ph = (patch.min(img.height())) & !1;
    let pw = (patch.min(img.width())) & !1;
    if ph == 0 || pw == 0 {
        return Err(Error::shape("random_patch", format!("image {:?} too small", img.shape())));
    }
    let y = rng.random_range(0..=(img.height() - ph) / 2) * 2;
    let x = rng.random_range(0..=(img.width() - pw) / 2) * 2;
    img.crop(y, x, ph, pw)
}

fn original(module: ModuleId, x: &Tensor, params: &[f32]) -> Result<Tensor> {
    let desc = module.descriptor();
    let domain = desc.domain_in.expect("proxied modules have a fixed domain");
    let img = Image::new(domain, x.clone())?;
    Ok(apply_original(module, &img, &ParamVector::new(params.to_vec()), &LearnedModules::empty())?.tensor)
}

/// A training example: input patch, normalised params, original output.
type Example = (Tensor, Vec<f32>, Tensor);

fn make_examples(
    module: ModuleId,
    images: &[Tensor],
    count: usize,
    patch: usize,
    rng: &mut IspRng,
) -> Result<Vec<Example>> {
    let desc = module.descriptor();
    let draws: Vec<(Tensor, Vec<f32>)> = (0..count)
        .map(|_| {
            let img = &images[rng.random_range(0..images.len())];
            Ok((random_patch(img, patch, rng)?, sample_params(desc, rng)))
        })
        .collect::<Result<_>>()?;
    draws
        .into_par_iter()
        .map(|(x, p)| {
            let y = original(module, &x, &p)?;
            Ok((x, p, y))
        })
        .collect()
}

/// Mean loss and weight gradient over `examples`, reduced in order.
fn batch_gradient(proxy: &ProxyNet, examples: &[Example]) -> Result<(f64, Vec<f32>)> {
    let per: Vec<(f64, Vec<f32>)> = examples
        .par_iter()
        .map(|(x, p, y)| {
            let (out, cache) = proxy.forward_unclamped(x, p)?;
            let (loss, g) = mse_with_grad(&out, y)?;
            let grads = proxy.backward_unclamped(&cache, &g, true)?;
            Ok((loss, grads.weights.expect("requested")))
        })
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f32;
    let mut total = 0.0;
    let mut grad = vec![0.0f32; proxy.net.param_count()];
    for (loss, g) in per {
        total += loss;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b / n;
        }
    }
    Ok((total / n as f64, grad))
}

/// PSNR of the clamped proxy output against the original over `examples`.
pub(crate) fn fidelity(proxy: &ProxyNet, examples: &[Example]) -> Result<f64> {
    let mses: Vec<f64> = examples
        .par_iter()
        .map(|(x, p, y)| crate::metrics::mse(&proxy.forward(x, p)?, y))
        .collect::<Result<_>>()?;
    Ok(psnr_from_mse(mses.iter().sum::<f64>() / mses.len().max(1) as f64))
}

/// Fits a proxy for `module` to its original operator on random patches of
/// `train` with random parameters, using Adam on the L2 loss. Fidelity is
/// measured on fixed pairs drawn from `holdout`.
pub fn train_proxy(
    module: ModuleId,
    train: &[Tensor],
    holdout: &[Tensor],
    cfg: &ProxyTrainConfig,
    seed: u64,
) -> Result<ProxyTrainOutcome> {
    let proxy = ProxyNet::new(module, &cfg.arch, seed)?;
    continue_training(proxy, train, holdout, cfg, seed)
}

/// Like [`train_proxy`] but starts from an existing proxy.
pub fn continue_training(
    mut proxy: ProxyNet,
    train: &[Tensor],
    holdout: &[Tensor],
    cfg: &ProxyTrainConfig,
    seed: u64,
) -> Result<ProxyTrainOutcome> {
    let module = proxy.module;
    if train.is_empty() || holdout.is_empty() {
        return Err(Error::Config(format!("empty corpus for {module} proxy")));
    }
    let mut rng = stream(seed, 1);
    let held = make_examples(module, holdout, cfg.holdout.max(1), cfg.patch, &mut stream(seed, 2))?;

    let mut params = proxy.net.params();
    let mut opt = Adam::new(params.len());
    let mut last_good = params.clone();
    let mut checkpoints = Vec::new();
    let marks: Vec<usize> = (1..=cfg.checkpoints).map(|k| k * cfg.steps / cfg.checkpoints.max(1)).collect();
    let (mut first_loss, mut last_loss) = (f64::NAN, f64::NAN);
    let mut diverged_at = None;

    for step in 0..cfg.steps {
        let batch = make_examples(module, train, cfg.batch.max(1), cfg.patch, &mut rng)?;
        let (loss, grad) = batch_gradient(&proxy, &batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            log::warn!("{module} proxy diverged at step {step}; keeping last finite weights");
            proxy.net.set_params(&last_good)?;
            diverged_at = Some(step);
            break;
        }
        if step == 0 {
            first_loss = loss;
        }
        last_loss = loss;
        last_good.copy_from_slice(&params);
        opt.step(&mut params, &grad, cfg.lr);
        proxy.net.set_params(&params)?;
        proxy.trained_steps += 1;
        if params.iter().any(|v| !v.is_finite()) {
            proxy.net.set_params(&last_good)?;
            diverged_at = Some(step);
            break;
        }
        if marks.contains(&(step + 1)) {
            checkpoints.push((step + 1, fidelity(&proxy, &held)?));
        }
    }
    let psnr = fidelity(&proxy, &held)?;
    let report = FidelityReport { module_id: module.to_string(), psnr, steps: proxy.trained_steps, seed };
    Ok(ProxyTrainOutcome { proxy, report, checkpoints, first_loss, last_loss, diverged_at })
}

/// One proxy-tuning update: for each input, draw fresh random parameters,
/// compute the original operator's output as the target and take a single
/// optimiser step on the mean L2 loss. Returns the loss before the step.
pub fn tune_step(
    proxy: &mut ProxyNet,
    inputs: &[Tensor],
    opt: &mut dyn Optimizer,
    lr: f32,
    rng: &mut IspRng,
) -> Result<f64> {
    let module = proxy.module;
    let desc = module.descriptor();
    let draws: Vec<(Tensor, Vec<f32>)> =
        inputs.iter().map(|x| (x.clone(), sample_params(desc, rng))).collect();
    let examples: Vec<Example> = draws
        .into_par_iter()
        .map(|(x, p)| {
            let y = original(module, &x, &p)?;
            Ok((x, p, y))
        })
        .collect::<Result<_>>()?;
    let (loss, grad) = batch_gradient(proxy, &examples)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: proxy_name(module) });
    }
    let mut params = proxy.net.params();
    opt.step(&mut params, &grad, lr);
    proxy.net.set_params(&params)?;
    proxy.trained_steps += 1;
    Ok(loss)
}

fn proxy_name(module: ModuleId) -> String {
    format!("proxy:{module}")
}

/// Held-out pairs for fidelity tracking outside of training.
pub fn holdout_examples(
    module: ModuleId,
    images: &[Tensor],
    count: usize,
    patch: usize,
    seed: u64,
) -> Result<Vec<(Tensor, Vec<f32>, Tensor)>> {
    make_examples(module, images, count, patch, &mut seeded(seed))
}

/// Held-out fidelity of `proxy` on `examples` (see [`holdout_examples`]).
pub fn holdout_fidelity(proxy: &ProxyNet, examples: &[(Tensor, Vec<f32>, Tensor)]) -> Result<f64> {
    fidelity(proxy, examples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(seed: u64, n: usize) -> Vec<Tensor> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| {
                let (a, b): (f32, f32) = (rng.random(), rng.random());
                Tensor::from_fn(16, 16, 3, move |y, x, c| {
                    (0.2 + 0.5 * a + 0.03 * ((x * (c + 1) + y) % 5) as f32 * b).clamp(0.0, 1.0)
                })
            })
            .collect()
    }

    #[test]
    fn crysis_proxy_learns() {
        let cfg = ProxyTrainConfig {
            steps: 60,
            batch: 4,
            patch: 8,
            lr: 3e-3,
            arch: ProxyArch::compact(),
            checkpoints: 3,
            holdout: 4,
        };
        let out = train_proxy(ModuleId::Crysisengine, &corpus(1, 6), &corpus(2, 2), &cfg, 7).unwrap();
        assert!(out.last_loss < out.first_loss, "{} !< {}", out.last_loss, out.first_loss);
        assert_eq!(out.checkpoints.len(), 3);
        assert_eq!(out.report.steps, 60);
        assert!(out.diverged_at.is_none());
    }

    #[test]
    fn divergence_keeps_last_good_weights() {
        let cfg = ProxyTrainConfig {
            steps: 5,
            batch: 2,
            patch: 8,
            lr: f32::INFINITY,
            arch: ProxyArch::compact(),
            checkpoints: 1,
            holdout: 2,
        };
        let out = train_proxy(ModuleId::Median, &corpus(1, 2), &corpus(2, 1), &cfg, 3).unwrap();
        assert!(out.diverged_at.is_some());
        assert!(out.proxy.net.params().iter().all(|v| v.is_finite()));
    }
}
