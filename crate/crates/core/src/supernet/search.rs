use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::config::SearchConfig;
use super::memory::DataMemory;
use super::net::SuperNet;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::modules::ModuleId;
use crate::nn::{mse_with_grad, Adam, Optimizer, OptimizerKind, Sgd};
use crate::proxy::tune_step;
use crate::rng::{stream, IspRng};
use crate::tensor::Tensor;

/// A differentiable training objective on the pipeline output.
pub trait LossFn: Sync {
    /// Loss value and its gradient with respect to `pred`.
    fn loss(&self, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)>;
}

/// Mean squared error.
#[derive(Clone, Copy, Debug, Default)]
pub struct L2;

impl LossFn for L2 {
    fn loss(&self, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        mse_with_grad(pred, target)
    }
}

/// An input image and its target output.
pub type Sample = (Image, Tensor);

/// `L * Lat^beta`, with `Lat` the α-expected latency.
pub fn efficiency_loss(base: f64, net: &SuperNet, beta: f32) -> Result<f64> {
    if beta == 0.0 {
        return Ok(base);
    }
    Ok(base * net.expected_latency()?.powf(beta as f64))
}

/// Batch-mean objective and gradients with respect to the flattened slot
/// parameters and logits.
#[derive(Clone, Debug)]
pub struct BatchGrad {
    /// `L * Lat^beta`.
    pub loss: f64,
    pub base_loss: f64,
    pub latency: f64,
    pub params: Vec<f32>,
    pub logits: Vec<f32>,
    /// `X_1..X_K` for every sample.
    pub intermediates: Vec<Vec<Tensor>>,
}

impl BatchGrad {
    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self.params.iter().all(|v| v.is_finite())
            && self.logits.iter().all(|v| v.is_finite())
    }
}

pub fn batch_gradient(net: &SuperNet, batch: &[Sample], loss_fn: &dyn LossFn, beta: f32) -> Result<BatchGrad> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let n = batch.len() as f64;
    let k_total = net.steps.len();
    let mut base_loss = 0.0;
    let mut d_alpha: Vec<Vec<f64>> = net.steps.iter().map(|s| vec![0.0; s.slots.len()]).collect();
    let mut d_params = vec![0.0f32; net.flat_params().len()];
    let mut intermediates = Vec::with_capacity(batch.len());
    for (x, y) in batch {
        let pass = net.forward_pass(x)?;
        let (l, g) = loss_fn.loss(&pass.output, y)?;
        base_loss += l / n;
        intermediates.push(pass.intermediates.clone());
        let grads = net.backward_pass(pass, &g)?;
        for k in 0..k_total {
            for (acc, v) in d_alpha[k].iter_mut().zip(&grads.alpha[k]) {
                *acc += v / n;
            }
        }
        for (acc, v) in d_params.iter_mut().zip(grads.params.iter().flatten().flatten()) {
            *acc += (*v as f64 / n) as f32;
        }
    }
    let (factor, latency) = if beta == 0.0 {
        (1.0, net.expected_latency().unwrap_or(0.0))
    } else {
        let lat = net.expected_latency()?;
        (lat.powf(beta as f64), lat)
    };
    if factor != 1.0 {
        for v in &mut d_params {
            *v = (*v as f64 * factor) as f32;
        }
    }
    let mut logits = Vec::with_capacity(net.flat_logits().len());
    for (k, step) in net.steps.iter().enumerate() {
        let mut da = d_alpha[k].clone();
        for (j, slot) in step.slots.iter().enumerate() {
            if !slot.valid {
                continue;
            }
            da[j] *= factor;
            if beta != 0.0 {
                let lat_j = net.latency_of(slot.module)?;
                da[j] += base_loss * beta as f64 * latency.powf(beta as f64 - 1.0) * lat_j;
            }
        }
        logits.extend(net.logit_grad(k, &da).into_iter().map(|v| v as f32));
    }
    Ok(BatchGrad {
        loss: base_loss * factor,
        base_loss,
        latency,
        params: d_params,
        logits,
        intermediates,
    })
}

/// Result of a single update.
#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Applied { loss: f64 },
    /// The gradient was not finite; nothing changed.
    Skipped,
}

/// One line of the search history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub loss: f64,
    pub latency_expected: f64,
    /// Per step, weights of every candidate slot (zero once pruned).
    pub alpha: Vec<Vec<f32>>,
    /// `(step, module)` pairs pruned this iteration; steps are 1-based.
    pub pruned: Vec<(usize, String)>,
    pub memory_len: usize,
    pub skipped: bool,
}

fn make_optimizer(kind: OptimizerKind, len: usize) -> Box<dyn Optimizer + Send> {
    match kind {
        OptimizerKind::Adam => Box::new(Adam::new(len)),
        OptimizerKind::Sgd => Box::new(Sgd),
    }
}

/// Search state: the super-network plus optimiser state, the data memory
/// and the random stream.
pub struct Search {
    pub net: SuperNet,
    pub cfg: SearchConfig,
    pub memory: DataMemory,
    param_opt: Box<dyn Optimizer + Send>,
    logit_opt: Box<dyn Optimizer + Send>,
    proxy_opts: BTreeMap<ModuleId, Adam>,
    rng: IspRng,
    tune_rng: IspRng,
    iteration: usize,
}

impl Search {
    pub fn new(net: SuperNet, cfg: SearchConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.plan != net.steps.iter().map(|s| s.plan).collect::<Vec<_>>() {
            return Err(Error::Config("search config plan differs from the network's".into()));
        }
        if cfg.beta > 0.0 {
            for s in net.steps.iter().flat_map(|s| &s.slots) {
                net.latency_of(s.module)?;
            }
        }
        let np = net.flat_params().len();
        let nz = net.flat_logits().len();
        Ok(Self {
            param_opt: make_optimizer(cfg.optimizer, np),
            logit_opt: make_optimizer(cfg.optimizer, nz),
            proxy_opts: BTreeMap::new(),
            memory: DataMemory::new(cfg.memory_capacity),
            rng: stream(cfg.seed, 10),
            tune_rng: stream(cfg.seed, 11),
            iteration: 0,
            net,
            cfg,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Learning-rate multiplier at iteration `t`: halved after every
    /// quarter of the run.
    pub fn schedule(&self, t: usize) -> f32 {
        let total = self.cfg.iterations.max(1);
        0.5f32.powi((4 * t / total).min(3) as i32)
    }

    /// Gradient step on the slot parameters.
    pub fn update_parameters(&mut self, batch: &[Sample], loss: &dyn LossFn, lr: f32) -> Result<(StepOutcome, Option<BatchGrad>)> {
        let grad = batch_gradient(&self.net, batch, loss, self.cfg.beta)?;
        if !grad.is_finite() {
            log::warn!("non-finite parameter gradient at iteration {}; step skipped", self.iteration);
            return Ok((StepOutcome::Skipped, Some(grad)));
        }
        let mut p = self.net.flat_params();
        self.param_opt.step(&mut p, &grad.params, lr);
        for v in &mut p {
            *v = v.clamp(0.0, 1.0);
        }
        self.net.set_flat_params(&p);
        Ok((StepOutcome::Applied { loss: grad.loss }, Some(grad)))
    }

    /// Plain architecture step at the current parameters.
    pub fn architecture_step(&mut self, val: &[Sample], loss: &dyn LossFn, lr: f32) -> Result<StepOutcome> {
        let grad = batch_gradient(&self.net, val, loss, self.cfg.beta)?;
        if !grad.is_finite() {
            log::warn!("non-finite architecture gradient at iteration {}; step skipped", self.iteration);
            return Ok(StepOutcome::Skipped);
        }
        let mut z = self.net.flat_logits();
        self.logit_opt.step(&mut z, &grad.logits, lr);
        self.net.set_flat_logits(&z);
        Ok(StepOutcome::Applied { loss: grad.loss })
    }

    /// Architecture step at virtually updated parameters
    /// `p - xi * grad_p L(train)`; the virtual step is then discarded.
    pub fn meta_update_architecture(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        loss: &dyn LossFn,
        lr: f32,
        xi: f32,
    ) -> Result<StepOutcome> {
        let saved = self.net.flat_params();
        if xi != 0.0 {
            let g = batch_gradient(&self.net, train, loss, self.cfg.beta)?;
            if !g.is_finite() {
                log::warn!("non-finite virtual-step gradient at iteration {}; step skipped", self.iteration);
                return Ok(StepOutcome::Skipped);
            }
            let virt: Vec<f32> =
                saved.iter().zip(&g.params).map(|(p, d)| (p - xi * d).clamp(0.0, 1.0)).collect();
            self.net.set_flat_params(&virt);
        }
        let out = self.architecture_step(val, loss, lr);
        self.net.set_flat_params(&saved);
        out
    }

    /// One proxy-tuning round: every surviving proxied module takes one
    /// step on inputs sampled from memory. Returns the modules tuned.
    pub fn proxy_tune(&mut self) -> Result<Vec<ModuleId>> {
        let mut live: Vec<ModuleId> = self
            .net
            .steps
            .iter()
            .flat_map(|s| &s.slots)
            .filter(|s| s.valid && s.module.descriptor().needs_proxy())
            .map(|s| s.module)
            .collect();
        live.sort();
        live.dedup();
        let lr = self.cfg.proxy_lr();
        let mut tuned = Vec::new();
        for module in live {
            let domain = module.descriptor().domain_in.expect("proxied modules have a domain");
            let inputs: Vec<Tensor> = self
                .memory
                .sample(domain, self.cfg.proxy_tune_batch.max(1), &mut self.tune_rng)
                .into_iter()
                .map(|e| e.image.clamp01())
                .collect();
            if inputs.is_empty() {
                continue;
            }
            let proxy = self.net.modules.proxies.get_mut(module).expect("checked at construction");
            let opt = self
                .proxy_opts
                .entry(module)
                .or_insert_with(|| Adam::new(proxy.net.param_count()));
            match tune_step(proxy, &inputs, opt, lr, &mut self.tune_rng) {
                Ok(_) => tuned.push(module),
                Err(Error::NonFinite { op }) => log::warn!("proxy tuning of {op} skipped: non-finite"),
                Err(e) => return Err(e),
            }
        }
        Ok(tuned)
    }

    /// One iteration of the search loop.
    pub fn step(&mut self, data: &[Sample], loss: &dyn LossFn) -> Result<HistoryRecord> {
        let t = self.iteration;
        let lr = self.cfg.lr * self.schedule(t);
        let xi = self.cfg.xi() * self.schedule(t);
        let size = self.cfg.batch.min(data.len());
        if size < 2 {
            return Err(Error::Config("need at least two samples per batch".into()));
        }
        let mut idx = sample(&mut self.rng, data.len(), size).into_vec();
        idx.sort_unstable();
        let chosen: Vec<Sample> = idx.iter().map(|&i| data[i].clone()).collect();
        let (train, val) = chosen.split_at(size / 2);

        let meta = self.meta_update_architecture(train, val, loss, lr, xi)?;
        let (upd, grad) = self.update_parameters(train, loss, lr)?;
        if let Some(g) = &grad {
            for sample_steps in &g.intermediates {
                for (k, x) in sample_steps.iter().enumerate() {
                    self.memory.push(k + 1, self.net.steps[k].plan.output, x.clone());
                }
            }
        }
        let pruned = self.net.prune(self.cfg.eta);
        if self.cfg.proxy_tuning && (t + 1) % self.cfg.tp == 0 && !self.memory.is_empty() {
            self.proxy_tune()?;
        }
        self.iteration += 1;
        let loss_value = match (&upd, &grad) {
            (StepOutcome::Applied { loss }, _) => *loss,
            (_, Some(g)) => g.loss,
            _ => f64::NAN,
        };
        Ok(HistoryRecord {
            iteration: t,
            loss: loss_value,
            latency_expected: self.net.expected_latency().unwrap_or(0.0),
            alpha: self.net.alphas(),
            pruned: pruned.into_iter().map(|(k, m)| (k + 1, m.to_string())).collect(),
            memory_len: self.memory.len(),
            skipped: meta == StepOutcome::Skipped || upd == StepOutcome::Skipped,
        })
    }

    /// Runs the remaining iterations, reporting each record to `on_record`.
    pub fn run(
        &mut self,
        data: &[Sample],
        loss: &dyn LossFn,
        mut on_record: impl FnMut(&HistoryRecord, &Search),
    ) -> Result<()> {
        for s in data {
            s.0.expect_domain(self.net.input_domain(), "search data")?;
        }
        while self.iteration < self.cfg.iterations {
            let rec = self.step(data, loss)?;
            on_record(&rec, self);
        }
        Ok(())
    }
}

/// Runs a complete search and returns the final network with its history.
pub fn search(
    net: SuperNet,
    cfg: &SearchConfig,
    data: &[Sample],
    loss: &dyn LossFn,
) -> Result<(SuperNet, Vec<HistoryRecord>)> {
    let mut s = Search::new(net, cfg.clone())?;
    let mut history = Vec::with_capacity(cfg.iterations);
    s.run(data, loss, |r, _| history.push(r.clone()))?;
    Ok((s.net, history))
}
