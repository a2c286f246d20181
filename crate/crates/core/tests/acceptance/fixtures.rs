//! Shared, lazily built state: trained stand-ins, the latency table and
//! the search runs later criteria reuse.

use std::collections::{BTreeMap, VecDeque};

use ispsearch::data::{benchmark_latency, synth_scene, LatencyTable};
use ispsearch::metrics::psnr;
use ispsearch::modules::learned::{self, training_pairs};
use ispsearch::modules::{LearnedKind, LearnedModules, ModuleId};
use ispsearch::pipeline::{run_pipeline, PipelineConfig, RunMode};
use ispsearch::proxy::{corpus_for, train_proxy, ProxyArch, ProxyNet, ProxySet, ProxyTrainConfig};
use ispsearch::rng::seeded;
use ispsearch::supernet::{HistoryRecord, Sample, Search, SearchConfig, SearchModules, SuperNet, L2};
use ispsearch::Tensor;

/// The bound every search must respect, independent of its configured
/// capacity.
pub const MEMORY_BOUND: usize = 1000;

/// Result of shadowing a search's data memory with an independent FIFO
/// model.
#[derive(Clone, Debug, Default)]
pub struct MemoryAudit {
    pub label: String,
    pub iterations: usize,
    pub max_len: usize,
    pub pushed: u64,
    pub evicted: u64,
    pub violations: Vec<String>,
}

pub struct SearchRun {
    pub net: SuperNet,
    pub history: Vec<HistoryRecord>,
}

/// Outcome of a low-light search, extraction and fine-tuning.
#[derive(Clone, Debug)]
pub struct LowLightResult {
    pub pipeline: PipelineConfig,
    pub psnr: f64,
    pub latency: f64,
}

#[derive(Default)]
pub struct Fixtures {
    trained: Option<SearchModules>,
    latency: Option<LatencyTable>,
    pub audits: Vec<MemoryAudit>,
    /// Serialised pipeline and history of each planted-pipeline run.
    pub planted_runs: Vec<(String, String)>,
    pub lowlight_base: Option<LowLightResult>,
}

pub fn proxy_arch() -> ProxyArch {
    ProxyArch::compact()
}

/// Proxies with every layer random and learned nets with random residual
/// layers, so no stand-in reduces to its base mapping.
pub fn random_modules(seed: u64) -> SearchModules {
    let mut proxies = ProxySet::default();
    for (i, &m) in ModuleId::ALGORITHMS.iter().enumerate() {
        if m.descriptor().needs_proxy() {
            proxies.insert(ProxyNet::random(m, &proxy_arch(), seed + i as u64).unwrap());
        }
    }
    SearchModules { proxies, learned: LearnedModules::initialised(seed + 100, false) }
}

fn scenes(count: usize, size: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = seeded(seed);
    (0..count).map(|_| synth_scene(size, size, &mut rng)).collect()
}

impl Fixtures {
    /// Proxies fitted to their operators and learned nets trained on
    /// generic synthetic scenes (never on the evaluation data).
    pub fn trained(&mut self) -> &SearchModules {
        self.trained.get_or_insert_with(|| {
            let train = scenes(48, 32, 900);
            let holdout = scenes(8, 32, 901);
            let cfg = ProxyTrainConfig {
                steps: 400,
                batch: 8,
                patch: 24,
                lr: 2e-3,
                arch: proxy_arch(),
                checkpoints: 1,
                holdout: 8,
            };
            let mut proxies = ProxySet::default();
            for (i, &m) in ModuleId::ALGORITHMS.iter().enumerate() {
                if !m.descriptor().needs_proxy() {
                    continue;
                }
                let out = train_proxy(
                    m,
                    &corpus_for(m, &train).unwrap(),
                    &corpus_for(m, &holdout).unwrap(),
                    &cfg,
                    500 + i as u64,
                )
                .unwrap();
                eprintln!("  proxy {m}: held-out PSNR {:.2} dB", out.report.psnr);
                proxies.insert(out.proxy);
            }
            let mut learned_nets = LearnedModules::empty();
            let mut rng = seeded(902);
            for (kind, sigma) in [
                (LearnedKind::BayerDenoise, 0.08),
                (LearnedKind::Demosaic, 0.0),
                (LearnedKind::SrgbDenoise, 0.05),
            ] {
                let pairs = training_pairs(kind, &train, sigma, &mut rng).unwrap();
                let rep = learned::train(&mut learned_nets, kind, &pairs, 400, 8, 2e-3, 903).unwrap();
                eprintln!("  {}: loss {:.5} -> {:.5}", kind.as_str(), rep.initial_loss, rep.final_loss);
            }
            SearchModules { proxies, learned: learned_nets }
        })
    }

    /// Seconds per megapixel of every module, measured on this machine.
    pub fn latency(&mut self) -> BTreeMap<ModuleId, f64> {
        let learned = self.trained().learned.clone();
        self.latency
            .get_or_insert_with(|| {
                let all: Vec<ModuleId> = ModuleId::all().collect();
                benchmark_latency(&all, 64, 64, 5, &learned).unwrap()
            })
            .by_module()
            .unwrap()
    }

    /// Runs a search while checking its data memory after every iteration
    /// against an independent FIFO model.
    pub fn audited_search(&mut self, label: &str, net: SuperNet, cfg: &SearchConfig, data: &[Sample]) -> SearchRun {
        let mut search = Search::new(net, cfg.clone()).unwrap();
        let mut audit = MemoryAudit { label: label.to_string(), ..Default::default() };
        let mut model: VecDeque<u64> = VecDeque::new();
        let mut history = Vec::with_capacity(cfg.iterations);
        search
            .run(data, &L2, |rec, s| {
                let pushed = s.memory.pushed();
                for seq in audit.pushed..pushed {
                    model.push_back(seq);
                    if model.len() > cfg.memory_capacity {
                        model.pop_front();
                    }
                }
                audit.pushed = pushed;
                audit.evicted = s.memory.evicted();
                audit.iterations += 1;
                let len = s.memory.len();
                audit.max_len = audit.max_len.max(len);
                if len > MEMORY_BOUND {
                    audit.violations.push(format!("iteration {}: |M| = {len}", rec.iteration));
                }
                let actual: Vec<u64> = s.memory.iter().map(|e| e.seq).collect();
                if actual.len() != model.len() || actual.iter().zip(&model).any(|(a, b)| a != b) {
                    audit.violations.push(format!("iteration {}: contents differ from FIFO order", rec.iteration));
                }
                if rec.memory_len != len {
                    audit.violations.push(format!("iteration {}: history reports {}", rec.iteration, rec.memory_len));
                }
                history.push(rec.clone());
            })
            .unwrap();
        self.audits.push(audit);
        SearchRun { net: search.net, history }
    }
}

/// Mean per-image PSNR of a pipeline run with the original operators.
pub fn mean_psnr(cfg: &PipelineConfig, modules: &SearchModules, data: &[Sample]) -> f64 {
    let total: f64 = data
        .iter()
        .map(|(x, y)| psnr(&run_pipeline(cfg, x, RunMode::Original, modules).unwrap().tensor, y).unwrap())
        .sum();
    total / data.len() as f64
}
