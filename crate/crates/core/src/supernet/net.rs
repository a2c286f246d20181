use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{validate_plan, StepPlan};
use crate::error::{Error, Result};
use crate::image::{Domain, Image};
use crate::modules::learned::LearnedCache;
use crate::modules::{AnalyticCache, AnalyticOp, LearnedKind, LearnedModules, ModuleId};
use crate::proxy::{ProxyCache, ProxySet};
use crate::tensor::{DifferentiableOp, Tensor};

/// Logit value that makes a slot's weight exactly zero after the softmax.
pub const OFF_LOGIT: f32 = -1e4;

/// One candidate module at one pipeline step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub module: ModuleId,
    /// Architecture logit; the weight is a softmax over valid slots.
    pub logit: f32,
    /// Normalised module parameters.
    pub params: Vec<f32>,
    /// False once pruned.
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub plan: StepPlan,
    pub slots: Vec<Slot>,
}

/// Modules offered at a step: every pool module whose domains match, plus
/// skip when the step keeps its domain. Ordered by pool index, so skip
/// comes last.
pub fn candidates(plan: StepPlan, pool: &[ModuleId]) -> Vec<ModuleId> {
    let mut out: Vec<ModuleId> = ModuleId::ALGORITHMS
        .into_iter()
        .filter(|m| pool.contains(m))
        .filter(|m| {
            let d = m.descriptor();
            d.domain_in == Some(plan.input) && d.domain_out == Some(plan.output)
        })
        .collect();
    if plan.input == plan.output {
        out.push(ModuleId::Skip);
    }
    out
}

pub fn learned_kind(id: ModuleId) -> Option<LearnedKind> {
    match id {
        ModuleId::LearnedBayerDenoiser => Some(LearnedKind::BayerDenoise),
        ModuleId::LearnedSrgbDenoiser => Some(LearnedKind::SrgbDenoise),
        ModuleId::LearnedDemosaic => Some(LearnedKind::Demosaic),
        _ => None,
    }
}

/// Differentiable implementations used during search: proxies for
/// operators without a gradient, the learned nets, and the analytic rest.
#[derive(Clone, Debug, Default)]
pub struct SearchModules {
    pub proxies: ProxySet,
    pub learned: LearnedModules,
}

pub enum SlotCache {
    Analytic(AnalyticCache),
    Proxy(ProxyCache),
    Learned(LearnedCache),
}

impl SearchModules {
    pub fn check_available(&self, id: ModuleId) -> Result<()> {
        if id.descriptor().needs_proxy() {
            self.proxies.require(id)?;
        } else if let Some(kind) = learned_kind(id) {
            if self.learned.get(kind).is_none() {
                return Err(Error::MissingWeights(kind.as_str().into()));
            }
        }
        Ok(())
    }

    pub fn forward(&self, id: ModuleId, x: &Tensor, p: &[f32]) -> Result<Tensor> {
        Ok(self.forward_cached(id, x, p)?.0)
    }

    pub fn forward_cached(&self, id: ModuleId, x: &Tensor, p: &[f32]) -> Result<(Tensor, SlotCache)> {
        if id.descriptor().needs_proxy() {
            let (y, c) = self.proxies.require(id)?.forward_cached(x, p)?;
            Ok((y, SlotCache::Proxy(c)))
        } else if let Some(kind) = learned_kind(id) {
            let (y, c) = self.learned.forward_cached(kind, x)?;
            Ok((y, SlotCache::Learned(c)))
        } else {
            let (y, c) = AnalyticOp::new(id)?.forward(x, p)?;
            Ok((y, SlotCache::Analytic(c)))
        }
    }

    /// Gradients with respect to the module input and its parameters.
    pub fn backward(&self, id: ModuleId, cache: SlotCache, g: &Tensor) -> Result<(Tensor, Vec<f32>)> {
        match cache {
            SlotCache::Proxy(c) => {
                let grads = self.proxies.require(id)?.backward(&c, g, false)?;
                Ok((grads.input, grads.params))
            }
            SlotCache::Learned(c) => {
                let kind = learned_kind(id).expect("learned cache from a learned module");
                Ok((self.learned.backward(kind, &c, g)?, Vec::new()))
            }
            SlotCache::Analytic(c) => {
                let grads = AnalyticOp::new(id)?.backward(c, g)?;
                Ok((grads.input, grads.params))
            }
        }
    }
}

/// Saved forward state of the whole super-network.
pub struct ForwardPass {
    /// `X_1..X_K` (before the final clamp).
    pub intermediates: Vec<Tensor>,
    /// Clamped `X_K`.
    pub output: Tensor,
    alphas: Vec<Vec<f32>>,
    /// Per step, per slot: module output and cache (None for zero weight).
    branches: Vec<Vec<Option<(Tensor, SlotCache)>>>,
}

/// Gradients of a scalar objective through a [`ForwardPass`].
#[derive(Clone, Debug)]
pub struct PassGrad {
    pub input: Tensor,
    /// d/d alpha per step and slot (zero for pruned slots).
    pub alpha: Vec<Vec<f64>>,
    /// d/d params per step and slot.
    pub params: Vec<Vec<Vec<f32>>>,
}

/// The differentiable super-network: at every step, a softmax-weighted sum
/// of all surviving candidate modules.
#[derive(Clone, Debug)]
pub struct SuperNet {
    pub steps: Vec<Step>,
    pub modules: SearchModules,
    /// Seconds per megapixel for each pooled module.
    pub latency: BTreeMap<ModuleId, f64>,
}

impl SuperNet {
    /// Uniform weights and default parameters at every slot. Fails with a
    /// configuration error if the plan does not chain, a step has no
    /// candidate, or a module's weights are missing.
    pub fn new(plan: &[StepPlan], pool: &[ModuleId], modules: SearchModules) -> Result<Self> {
        validate_plan(plan)?;
        let mut steps = Vec::with_capacity(plan.len());
        for (k, &p) in plan.iter().enumerate() {
            let ids = candidates(p, pool);
            if ids.is_empty() {
                return Err(Error::Config(format!("step {} ({p}) has no candidate module", k + 1)));
            }
            for &id in &ids {
                modules.check_available(id)?;
            }
            let slots = ids
                .into_iter()
                .map(|module| Slot {
                    module,
                    logit: 0.0,
                    params: module.descriptor().default_params().0,
                    valid: true,
                })
                .collect();
            steps.push(Step { plan: p, slots });
        }
        Ok(Self { steps, modules, latency: BTreeMap::new() })
    }

    pub fn input_domain(&self) -> Domain {
        self.steps[0].plan.input
    }

    pub fn output_domain(&self) -> Domain {
        self.steps.last().expect("non-empty").plan.output
    }

    /// Number of architecture weights (surviving slots).
    pub fn architecture_weight_count(&self) -> usize {
        self.steps.iter().flat_map(|s| &s.slots).filter(|s| s.valid).count()
    }

    /// Number of algorithm parameters over surviving slots.
    pub fn algorithm_param_count(&self) -> usize {
        self.steps
            .iter()
            .flat_map(|s| &s.slots)
            .filter(|s| s.valid)
            .map(|s| s.params.len())
            .sum()
    }

    /// Softmax over the valid slots of step `k`; pruned slots get zero.
    pub fn alpha(&self, k: usize) -> Vec<f32> {
        let slots = &self.steps[k].slots;
        let max = slots
            .iter()
            .filter(|s| s.valid)
            .map(|s| s.logit)
            .fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = slots
            .iter()
            .map(|s| if s.valid { ((s.logit - max) as f64).exp() } else { 0.0 })
            .collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| (e / total) as f32).collect()
    }

    pub fn alphas(&self) -> Vec<Vec<f32>> {
        (0..self.steps.len()).map(|k| self.alpha(k)).collect()
    }

    /// Index of the largest weight at step `k`; ties go to the lowest index.
    pub fn argmax(&self, k: usize) -> usize {
        let a = self.alpha(k);
        let mut best = None::<usize>;
        for (j, s) in self.steps[k].slots.iter().enumerate() {
            if s.valid && best.is_none_or(|b| a[j] > a[b]) {
                best = Some(j);
            }
        }
        best.expect("every step keeps a valid slot")
    }

    /// Makes step `k` select slot `j` exclusively.
    pub fn set_one_hot(&mut self, k: usize, j: usize) {
        for (i, s) in self.steps[k].slots.iter_mut().enumerate() {
            s.logit = if i == j { 0.0 } else { OFF_LOGIT };
        }
    }

    pub fn slot_index(&self, k: usize, module: ModuleId) -> Option<usize> {
        self.steps[k].slots.iter().position(|s| s.module == module)
    }

    /// α-expected latency `sum_k sum_j alpha_kj lat_j` in seconds per
    /// megapixel.
    pub fn expected_latency(&self) -> Result<f64> {
        let mut total = 0.0;
        for (k, step) in self.steps.iter().enumerate() {
            let a = self.alpha(k);
            for (s, &w) in step.slots.iter().zip(&a) {
                if s.valid {
                    total += w as f64 * self.latency_of(s.module)?;
                }
            }
        }
        Ok(total)
    }

    pub fn latency_of(&self, module: ModuleId) -> Result<f64> {
        self.latency
            .get(&module)
            .copied()
            .ok_or_else(|| Error::Config(format!("no latency entry for {module}")))
    }

    pub fn forward(&self, input: &Image) -> Result<(Image, Vec<Tensor>)> {
        let pass = self.forward_pass(input)?;
        Ok((Image::new(self.output_domain(), pass.output)?, pass.intermediates))
    }

    /// Runs every surviving branch and keeps what the backward pass needs.
    pub fn forward_pass(&self, input: &Image) -> Result<ForwardPass> {
        input.expect_domain(self.input_domain(), "supernet input")?;
        let alphas = self.alphas();
        let mut x = input.tensor.clone();
        let mut intermediates = Vec::with_capacity(self.steps.len());
        let mut branches = Vec::with_capacity(self.steps.len());
        for (k, step) in self.steps.iter().enumerate() {
            let mut mix: Option<Tensor> = None;
            let mut row = Vec::with_capacity(step.slots.len());
            for (slot, &a) in step.slots.iter().zip(&alphas[k]) {
                if !slot.valid || a == 0.0 {
                    row.push(None);
                    continue;
                }
                let (y, cache) = self.modules.forward_cached(slot.module, &x, &slot.params)?;
                match &mut mix {
                    None => mix = Some(y.scale(a)),
                    Some(m) => m.axpy(a, &y)?,
                }
                row.push(Some((y, cache)));
            }
            let mixed = mix.expect("at least one branch has positive weight");
            intermediates.push(mixed.clone());
            branches.push(row);
            x = mixed;
        }
        let output = x.clamp01();
        Ok(ForwardPass { intermediates, output, alphas, branches })
    }

    /// Backpropagates `grad_out` (the gradient with respect to the clamped
    /// output) through a forward pass.
    pub fn backward_pass(&self, pass: ForwardPass, grad_out: &Tensor) -> Result<PassGrad> {
        let ForwardPass { intermediates, alphas, branches, .. } = pass;
        let last = intermediates.last().expect("non-empty");
        let mut g = last.zip_map(grad_out, |v, g| if (0.0..=1.0).contains(&v) { g } else { 0.0 })?;
        let k_total = self.steps.len();
        let mut d_alpha = vec![Vec::new(); k_total];
        let mut d_params = vec![Vec::new(); k_total];
        for (k, row) in branches.into_iter().enumerate().rev() {
            let step = &self.steps[k];
            let mut da = vec![0.0f64; step.slots.len()];
            let mut dp: Vec<Vec<f32>> = step.slots.iter().map(|s| vec![0.0; s.params.len()]).collect();
            let mut g_prev: Option<Tensor> = None;
            for (j, entry) in row.into_iter().enumerate() {
                let Some((y, cache)) = entry else { continue };
                da[j] = y.dot(&g)?;
                let a = alphas[k][j];
                let (dx, dpj) = self.modules.backward(step.slots[j].module, cache, &g.scale(a))?;
                dp[j] = dpj;
                match &mut g_prev {
                    None => g_prev = Some(dx),
                    Some(acc) => acc.axpy(1.0, &dx)?,
                }
            }
            d_alpha[k] = da;
            d_params[k] = dp;
            g = g_prev.expect("at least one branch");
        }
        Ok(PassGrad { input: g, alpha: d_alpha, params: d_params })
    }

    /// Pulls a gradient with respect to the weights of step `k` back to its
    /// logits: `dz = alpha * (dalpha - <alpha, dalpha>)`.
    pub fn logit_grad(&self, k: usize, d_alpha: &[f64]) -> Vec<f64> {
        let a = self.alpha(k);
        let inner: f64 = a.iter().zip(d_alpha).map(|(&w, &d)| w as f64 * d).sum();
        a.iter()
            .zip(d_alpha)
            .zip(&self.steps[k].slots)
            .map(|((&w, &d), s)| if s.valid { w as f64 * (d - inner) } else { 0.0 })
            .collect()
    }

    /// Removes every valid slot whose weight is at most `eta` times the
    /// step's largest weight. The argmax slot always survives. Returns the
    /// `(step, module)` pairs removed.
    pub fn prune(&mut self, eta: f32) -> Vec<(usize, ModuleId)> {
        let mut removed = Vec::new();
        for k in 0..self.steps.len() {
            let a = self.alpha(k);
            let best = self.argmax(k);
            let threshold = eta * a[best];
            for (j, slot) in self.steps[k].slots.iter_mut().enumerate() {
                if slot.valid && j != best && a[j] <= threshold {
                    slot.valid = false;
                    removed.push((k, slot.module));
                }
            }
        }
        removed
    }

    /// All slot parameters, flattened step by step and slot by slot.
    pub fn flat_params(&self) -> Vec<f32> {
        self.steps.iter().flat_map(|s| &s.slots).flat_map(|s| s.params.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f32]) {
        let mut it = flat.iter();
        for s in self.steps.iter_mut().flat_map(|s| &mut s.slots) {
            for p in &mut s.params {
                *p = *it.next().expect("flat parameter length");
            }
        }
    }

    pub fn flat_logits(&self) -> Vec<f32> {
        self.steps.iter().flat_map(|s| &s.slots).map(|s| s.logit).collect()
    }

    pub fn set_flat_logits(&mut self, flat: &[f32]) {
        for (s, &z) in self.steps.iter_mut().flat_map(|s| &mut s.slots).zip(flat) {
            s.logit = z;
        }
    }

    /// Valid-slot mask aligned with [`Self::flat_logits`].
    pub fn valid_mask(&self) -> Vec<bool> {
        self.steps.iter().flat_map(|s| &s.slots).map(|s| s.valid).collect()
    }
}

/// Exposes the super-network as a single operator whose parameters are
/// the flattened slot parameters followed by the flattened logits.
pub struct SuperNetOp<'a> {
    pub net: &'a SuperNet,
}

impl SuperNetOp<'_> {
    pub fn params(&self) -> Vec<f32> {
        let mut p = self.net.flat_params();
        p.extend(self.net.flat_logits());
        p
    }

    fn with_params(&self, params: &[f32]) -> Result<SuperNet> {
        let np = self.net.flat_params().len();
        let nz = self.net.flat_logits().len();
        if params.len() != np + nz {
            return Err(Error::shape("SuperNetOp", format!("{} values for {} parameters", params.len(), np + nz)));
        }
        let mut net = self.net.clone();
        net.set_flat_params(&params[..np]);
        net.set_flat_logits(&params[np..]);
        Ok(net)
    }
}

impl DifferentiableOp for SuperNetOp<'_> {
    type Cache = (SuperNet, ForwardPass);

    fn name(&self) -> String {
        "supernet".into()
    }

    fn forward(&self, input: &Tensor, params: &[f32]) -> Result<(Tensor, Self::Cache)> {
        let net = self.with_params(params)?;
        let img = Image::new(net.input_domain(), input.clone())?;
        let pass = net.forward_pass(&img)?;
        Ok((pass.output.clone(), (net, pass)))
    }

    fn backward(&self, (net, pass): Self::Cache, grad_out: &Tensor) -> Result<crate::tensor::OpGradient> {
        let g = net.backward_pass(pass, grad_out)?;
        let mut params: Vec<f32> = g.params.iter().flatten().flatten().copied().collect();
        for (k, da) in g.alpha.iter().enumerate() {
            params.extend(net.logit_grad(k, da).into_iter().map(|v| v as f32));
        }
        Ok(crate::tensor::OpGradient { input: g.input, params })
    }
}
