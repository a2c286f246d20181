use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Domain;
use crate::modules::ModuleId;
use crate::nn::OptimizerKind;
use crate::proxy::ProxyArch;

/// Input and output domain of one pipeline step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepPlan {
    pub input: Domain,
    pub output: Domain,
}

impl StepPlan {
    pub const RAW_RAW: StepPlan = StepPlan { input: Domain::BayerRaw, output: Domain::BayerRaw };
    pub const RAW_SRGB: StepPlan = StepPlan { input: Domain::BayerRaw, output: Domain::Srgb };
    pub const SRGB_SRGB: StepPlan = StepPlan { input: Domain::Srgb, output: Domain::Srgb };
}

fn domain_name(d: Domain) -> &'static str {
    match d {
        Domain::BayerRaw => "raw",
        Domain::Srgb => "srgb",
    }
}

fn parse_domain(s: &str) -> Result<Domain> {
    match s.trim() {
        "raw" => Ok(Domain::BayerRaw),
        "srgb" => Ok(Domain::Srgb),
        other => Err(Error::Config(format!("unknown domain `{other}` (expected raw or srgb)"))),
    }
}

impl fmt::Display for StepPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}>{}", domain_name(self.input), domain_name(self.output))
    }
}

impl FromStr for StepPlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('>')
            .ok_or_else(|| Error::Config(format!("step `{s}` is not of the form in>out")))?;
        Ok(StepPlan { input: parse_domain(a)?, output: parse_domain(b)? })
    }
}

/// One RAW denoising step, one demosaicking step, then sRGB steps.
pub fn default_plan(k: usize) -> Vec<StepPlan> {
    match k {
        0 => vec![],
        1 => vec![StepPlan::RAW_SRGB],
        _ => {
            let mut plan = vec![StepPlan::RAW_RAW, StepPlan::RAW_SRGB];
            plan.extend(std::iter::repeat_n(StepPlan::SRGB_SRGB, k - 2));
            plan
        }
    }
}

/// Checks that consecutive steps chain and returns the input domain.
pub fn validate_plan(plan: &[StepPlan]) -> Result<Domain> {
    let first = plan.first().ok_or_else(|| Error::Config("domain plan is empty".into()))?;
    for (i, pair) in plan.windows(2).enumerate() {
        if pair[0].output != pair[1].input {
            return Err(Error::Config(format!(
                "domain plan breaks between steps {} and {}: {} then {}",
                i + 1,
                i + 2,
                pair[0],
                pair[1]
            )));
        }
    }
    Ok(first.input)
}

/// Search hyper-parameters. Defaults follow the reference setup; desk-scale
/// runs typically raise `lr` and shrink `proxy_arch`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Pipeline length.
    pub k: usize,
    pub plan: Vec<StepPlan>,
    /// Pruning threshold relative to the step's largest weight.
    pub eta: f32,
    pub memory_capacity: usize,
    /// Proxy-tuning interval in iterations.
    pub tp: usize,
    /// Learning rate, halved after every quarter of the run.
    pub lr: f32,
    /// Virtual-step size of the meta update; `None` means `lr`.
    pub xi: Option<f32>,
    /// Total iterations.
    pub iterations: usize,
    /// Latency exponent.
    pub beta: f32,
    /// Samples per iteration, split evenly into meta-train and meta-val.
    pub batch: usize,
    pub optimizer: OptimizerKind,
    pub proxy_tuning: bool,
    pub proxy_lr: Option<f32>,
    pub proxy_tune_batch: usize,
    pub proxy_arch: ProxyArch,
    pub pool: Vec<ModuleId>,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k: 5,
            plan: default_plan(5),
            eta: 0.2,
            memory_capacity: 1000,
            tp: 20,
            lr: 1e-4,
            xi: None,
            iterations: 1000,
            beta: 0.0,
            batch: 2,
            optimizer: OptimizerKind::Adam,
            proxy_tuning: true,
            proxy_lr: None,
            proxy_tune_batch: 4,
            proxy_arch: ProxyArch::srcnn(),
            pool: ModuleId::ALGORITHMS.to_vec(),
            seed: 0,
        }
    }
}

/// Named latency exponents.
pub fn preset_beta(name: &str) -> Result<f32> {
    match name {
        "base" => Ok(0.0),
        "fast" => Ok(0.14),
        "faster" => Ok(0.28),
        other => Err(Error::Config(format!("unknown preset `{other}` (base, fast, faster)"))),
    }
}

impl SearchConfig {
    pub fn xi(&self) -> f32 {
        self.xi.unwrap_or(self.lr)
    }

    pub fn proxy_lr(&self) -> f32 {
        self.proxy_lr.unwrap_or(self.lr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.plan.len() != self.k {
            return Err(Error::Config(format!(
                "plan has {} steps but k = {}",
                self.plan.len(),
                self.k
            )));
        }
        validate_plan(&self.plan)?;
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.tp == 0 {
            return Err(Error::Config("tp must be at least 1".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.batch < 2 {
            return Err(Error::Config("batch must be at least 2 (meta-train and meta-val)".into()));
        }
        if self.memory_capacity == 0 {
            return Err(Error::Config("memory_capacity must be positive".into()));
        }
        if !(self.lr >= 0.0) || self.xi.is_some_and(|x| !(x >= 0.0)) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        if self.pool.is_empty() {
            return Err(Error::Config("module pool is empty".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` setting. Keys mirror the field names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
        }
        let v = value.trim();
        match key.trim() {
            "k" => {
                self.k = num(key, v)?;
                self.plan = default_plan(self.k);
            }
            "plan" => {
                self.plan = v.split(',').map(str::parse).collect::<Result<_>>()?;
                self.k = self.plan.len();
            }
            "eta" => self.eta = num(key, v)?,
            "memory_capacity" => self.memory_capacity = num(key, v)?,
            "tp" => self.tp = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "xi" => self.xi = Some(num(key, v)?),
            "iterations" => self.iterations = num(key, v)?,
            "beta" => self.beta = num(key, v)?,
            "preset" => self.beta = preset_beta(v)?,
            "batch" => self.batch = num(key, v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(Error::Config(format!("unknown optimizer `{v}`"))),
                }
            }
            "proxy_tuning" => self.proxy_tuning = num(key, v)?,
            "proxy_lr" => self.proxy_lr = Some(num(key, v)?),
            "proxy_tune_batch" => self.proxy_tune_batch = num(key, v)?,
            "proxy_arch" => {
                self.proxy_arch = match v {
                    "srcnn" => ProxyArch::srcnn(),
                    "compact" => ProxyArch::compact(),
                    _ => return Err(Error::Config(format!("unknown proxy_arch `{v}`"))),
                }
            }
            "pool" => {
                self.pool = if v == "all" {
                    ModuleId::ALGORITHMS.to_vec()
                } else {
                    v.split(',')
                        .map(|s| s.trim().parse::<ModuleId>())
                        .collect::<Result<_>>()?
                }
            }
            "seed" => self.seed = num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a flat `key = value` file; `#` starts a comment. Keys not
    /// listed keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    /// Renders the configuration in the format read by [`Self::parse`].
    pub fn to_text(&self) -> String {
        let plan: Vec<String> = self.plan.iter().map(ToString::to_string).collect();
        let pool: Vec<&str> = self.pool.iter().map(|m| m.as_str()).collect();
        let arch = if self.proxy_arch == ProxyArch::compact() { "compact" } else { "srcnn" };
        let mut s = String::new();
        let mut line = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        line("plan", plan.join(","));
        line("eta", self.eta.to_string());
        line("memory_capacity", self.memory_capacity.to_string());
        line("tp", self.tp.to_string());
        line("lr", self.lr.to_string());
        if let Some(xi) = self.xi {
            line("xi", xi.to_string());
        }
        line("iterations", self.iterations.to_string());
        line("beta", self.beta.to_string());
        line("batch", self.batch.to_string());
        line("optimizer", if self.optimizer == OptimizerKind::Adam { "adam" } else { "sgd" }.into());
        line("proxy_tuning", self.proxy_tuning.to_string());
        if let Some(p) = self.proxy_lr {
            line("proxy_lr", p.to_string());
        }
        line("proxy_tune_batch", self.proxy_tune_batch.to_string());
        line("proxy_arch", arch.into());
        line("pool", pool.join(","));
        line("seed", self.seed.to_string());
        s
    }
}
