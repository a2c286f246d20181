//! Fixed pipelines: extraction from a searched super-network, parameter
//! fine-tuning and execution with either the original operators or their
//! differentiable stand-ins.

mod finetune;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Domain, Image};
use crate::modules::{apply_original, ModuleId, ParamVector};
use crate::supernet::{SearchModules, SlotCache, SuperNet};
use crate::tensor::Tensor;

pub use finetune::{finetune_parameters, original_loss, FinetuneOptions, FinetuneOutcome};

pub const PIPELINE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineStep {
    pub module: ModuleId,
    pub params_normalized: Vec<f32>,
    /// Denormalised values, for reading only; execution uses the
    /// normalised ones.
    pub params_actual: Vec<f32>,
}

impl PipelineStep {
    pub fn new(module: ModuleId, params_normalized: Vec<f32>) -> Self {
        let params_actual = module.descriptor().actual(&ParamVector(params_normalized.clone()));
        Self { module, params_normalized, params_actual }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetadata {
    pub input_domain: Option<Domain>,
    pub seed: u64,
    pub config_hash: String,
    /// Summed seconds per megapixel of the chain, when known.
    pub latency: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub version: u32,
    pub steps: Vec<PipelineStep>,
    pub metadata: PipelineMetadata,
}

/// Which implementation executes each module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Original,
    Proxy,
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(RunMode::Original),
            "proxy" => Ok(RunMode::Proxy),
            _ => Err(Error::Config(format!("unknown run mode `{s}` (original|proxy)"))),
        }
    }
}

/// 64-bit FNV-1a, hex encoded. Stable across platforms and releases.
pub fn stable_hash(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

impl PipelineConfig {
    pub fn new(steps: Vec<PipelineStep>, input_domain: Domain) -> Result<Self> {
        let cfg = Self {
            version: PIPELINE_VERSION,
            steps,
            metadata: PipelineMetadata { input_domain: Some(input_domain), ..Default::default() },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn modules(&self) -> Vec<ModuleId> {
        self.steps.iter().map(|s| s.module).collect()
    }

    pub fn input_domain(&self) -> Result<Domain> {
        if let Some(d) = self.metadata.input_domain {
            return Ok(d);
        }
        self.steps
            .iter()
            .find_map(|s| s.module.descriptor().domain_in)
            .ok_or_else(|| Error::Config("input domain of a skip-only pipeline must be recorded".into()))
    }

    /// Domain after each step, starting from the input domain.
    pub fn output_domain(&self) -> Result<Domain> {
        let mut d = self.input_domain()?;
        for (k, s) in self.steps.iter().enumerate() {
            d = s.module.descriptor().output_domain(d).ok_or_else(|| Error::Domain {
                op: format!("pipeline step {} ({})", k + 1, s.module),
                expected: s.module.descriptor().domain_in.unwrap_or(d),
                got: d,
            })?;
        }
        Ok(d)
    }

    /// Checks the version, domain chain and parameter vectors.
    pub fn validate(&self) -> Result<()> {
        if self.version != PIPELINE_VERSION {
            return Err(Error::Config(format!("unsupported pipeline version {}", self.version)));
        }
        for s in &self.steps {
            s.module.descriptor().check_params(&s.params_normalized)?;
            if s.params_normalized.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!("{}: normalised parameters must lie in [0, 1]", s.module)));
            }
        }
        self.output_domain()?;
        Ok(())
    }

    /// Recomputes the denormalised values from the normalised ones.
    pub fn refresh_actual(&mut self) {
        for s in &mut self.steps {
            *s = PipelineStep::new(s.module, std::mem::take(&mut s.params_normalized));
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text)
    }
}

/// The highest-weight surviving module of every step, lowest pool index on
/// ties, with its current parameters. Latency is filled in when the network
/// carries entries for every chosen module.
pub fn extract_pipeline(net: &SuperNet, seed: u64, config_hash: &str) -> Result<PipelineConfig> {
    let steps: Vec<PipelineStep> = net
        .steps
        .iter()
        .enumerate()
        .map(|(k, step)| {
            let slot = &step.slots[net.argmax(k)];
            PipelineStep::new(slot.module, slot.params.clone())
        })
        .collect();
    let latency = steps.iter().map(|s| net.latency_of(s.module)).sum::<Result<f64>>().ok();
    let mut cfg = PipelineConfig::new(steps, net.input_domain())?;
    cfg.metadata.seed = seed;
    cfg.metadata.config_hash = config_hash.to_string();
    cfg.metadata.latency = latency;
    Ok(cfg)
}

/// Runs `input` through the pipeline and clamps the result to `[0, 1]`.
/// The domain chain is checked before any module runs.
pub fn run_pipeline(cfg: &PipelineConfig, input: &Image, mode: RunMode, modules: &SearchModules) -> Result<Image> {
    input.expect_domain(cfg.input_domain()?, "pipeline input")?;
    let out_domain = cfg.output_domain()?;
    for s in &cfg.steps {
        s.module.descriptor().check_params(&s.params_normalized)?;
        if mode == RunMode::Proxy {
            modules.check_available(s.module)?;
        }
    }
    let mut x = input.clone();
    for s in &cfg.steps {
        x = match mode {
            RunMode::Original => {
                apply_original(s.module, &x, &ParamVector(s.params_normalized.clone()), &modules.learned)?
            }
            RunMode::Proxy => {
                let d = s.module.descriptor().output_domain(x.domain).expect("chain validated");
                Image::new(d, modules.forward(s.module, &x.tensor, &s.params_normalized)?)?
            }
        };
    }
    debug_assert_eq!(x.domain, out_domain);
    Image::new(out_domain, x.tensor.clamp01())
}

/// Differentiable execution state of a fixed chain.
pub(crate) struct ChainPass {
    pre_clamp: Tensor,
    pub output: Tensor,
    caches: Vec<SlotCache>,
}

pub(crate) fn chain_forward(cfg: &PipelineConfig, modules: &SearchModules, input: &Tensor) -> Result<ChainPass> {
    let mut x = input.clone();
    let mut caches = Vec::with_capacity(cfg.steps.len());
    for s in &cfg.steps {
        let (y, c) = modules.forward_cached(s.module, &x, &s.params_normalized)?;
        caches.push(c);
        x = y;
    }
    Ok(ChainPass { output: x.clamp01(), pre_clamp: x, caches })
}

/// Gradients with respect to every step's normalised parameters.
pub(crate) fn chain_backward(
    cfg: &PipelineConfig,
    modules: &SearchModules,
    pass: ChainPass,
    grad_out: &Tensor,
) -> Result<Vec<Vec<f32>>> {
    let mut g = pass.pre_clamp.zip_map(grad_out, |v, g| if (0.0..=1.0).contains(&v) { g } else { 0.0 })?;
    let mut grads = vec![Vec::new(); cfg.steps.len()];
    for (k, cache) in pass.caches.into_iter().enumerate().rev() {
        let (dx, dp) = modules.backward(cfg.steps[k].module, cache, &g)?;
        grads[k] = dp;
        g = dx;
    }
    Ok(grads)
}
