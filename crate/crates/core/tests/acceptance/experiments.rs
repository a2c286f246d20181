use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use ispsearch::image::{mosaic_rggb, Domain, Image};
use ispsearch::modules::{LearnedModules, ModuleId};
use ispsearch::pipeline::{
    extract_pipeline, finetune_parameters, run_pipeline, stable_hash, FinetuneOptions, PipelineConfig, PipelineStep,
    RunMode,
};
use ispsearch::proxy::{ProxyArch, ProxySet};
use ispsearch::rng::seeded;
use ispsearch::supernet::{candidates, default_plan, Sample, SearchConfig, SearchModules, StepPlan, SuperNet, L2};
use ispsearch::data::{low_light_dataset, synth_scene, NoiseParams};
use ispsearch::Tensor;

use crate::fixtures::{mean_psnr, proxy_arch, random_modules, Fixtures, LowLightResult, MEMORY_BOUND};
use crate::oracle::{self, NetState, T};
use crate::Verdict;

/// Relative tolerance of every gradient coordinate.
const GRAD_TOL: f64 = 1e-3;
/// Coordinates smaller than this fraction of the largest finite-difference
/// gradient of the same check are compared at that scale, since their
/// relative error only measures f32 round-off.
const GRAD_FLOOR: f64 = 1e-3;
const FD_EPS: f64 = 1e-6;

const LOW_LIGHT_RATIO: f32 = 50.0;
const LOW_LIGHT_NOISE: NoiseParams = NoiseParams { sigma: 0.002, poisson_scale: 0.0005 };

fn random_tensor(h: usize, w: usize, c: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(h, w, c, |_, _, _| rng.random_range(0.05..0.95))
}

fn random_params(n: usize, rng: &mut impl Rng) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(0.1..0.9)).collect()
}

/// Largest per-coordinate relative error between an analytic and a
/// finite-difference gradient.
fn worst_relative(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())) * GRAD_FLOOR;
    let mut worst = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(scale).max(1e-12);
        let e = (a - n).abs() / denom;
        if e > worst.0 {
            worst = (e, i);
        }
    }
    worst
}

pub fn parameter_counts(_: &mut Fixtures) -> Verdict {
    let t0 = Instant::now();
    let modules = SearchModules {
        proxies: ProxySet::untrained(&ModuleId::ALGORITHMS, &ProxyArch::compact(), 0).unwrap(),
        learned: LearnedModules::initialised(0, true),
    };
    let net = SuperNet::new(&default_plan(5), &ModuleId::ALGORITHMS, modules).unwrap();
    let (a, p) = (net.architecture_weight_count(), net.algorithm_param_count());
    let secs = t0.elapsed().as_secs_f64();
    Verdict::new(
        a == 54 && p == 172 && a + p == 226 && secs < 1.0,
        format!("{a} architecture + {p} algorithm = {} parameters, want 54 + 172 = 226 exactly in < 1 s", a + p),
    )
}

/// Gradients of `<w, module(x, p)>` with respect to `x` and `p`, analytic
/// against central differences of the double-precision oracle.
fn check_module(module: ModuleId, mods: &SearchModules, rng: &mut impl Rng) -> Result<f64, String> {
    let desc = module.descriptor();
    let channels = match desc.domain_in {
        Some(Domain::BayerRaw) => 1,
        _ => 3,
    };
    let x = random_tensor(8, 8, channels, rng);
    let p = random_params(desc.param_count(), rng);
    let (y, cache) = mods.forward_cached(module, &x, &p).map_err(|e| e.to_string())?;
    let w: Vec<f64> = (0..y.len()).map(|_| rng.random_range(0.5..1.5)).collect();
    let wt = Tensor::from_vec(y.height(), y.width(), y.channels(), w.iter().map(|&v| v as f32).collect()).unwrap();
    let (dx, dp) = mods.backward(module, cache, &wt).map_err(|e| e.to_string())?;

    let x64 = T::from_tensor(&x);
    let p64: Vec<f64> = p.iter().map(|&v| v as f64).collect();
    let reference = oracle::apply(module, mods, &x64, &p64);
    let fwd_err = reference.d.iter().zip(y.data()).fold(0.0f64, |m, (a, &b)| m.max((a - b as f64).abs()));
    if fwd_err > 1e-4 {
        return Err(format!("{module}: oracle forward differs by {fwd_err:.2e}"));
    }

    let mut xv = x64.d.clone();
    let num_x: Vec<f64> = (0..xv.len())
        .map(|i| {
            oracle::central(&mut xv, i, FD_EPS, |v| {
                let xt = T { d: v.to_vec(), ..x64.clone() };
                oracle::project(&oracle::apply(module, mods, &xt, &p64), &w)
            })
        })
        .collect();
    let mut pv = p64.clone();
    let num_p: Vec<f64> = (0..pv.len())
        .map(|i| oracle::central(&mut pv, i, FD_EPS, |v| oracle::project(&oracle::apply(module, mods, &x64, v), &w)))
        .collect();
    let ana_x: Vec<f64> = dx.data().iter().map(|&v| v as f64).collect();
    let ana_p: Vec<f64> = dp.iter().map(|&v| v as f64).collect();
    let (ex, _) = worst_relative(&ana_x, &num_x);
    let (ep, _) = if num_p.is_empty() { (0.0, 0) } else { worst_relative(&ana_p, &num_p) };
    Ok(ex.max(ep))
}

/// End-to-end check through the full-pool super-network: input, every slot
/// parameter and every logit.
fn check_supernet(rng: &mut impl Rng) -> (f64, f64, f64) {
    let mut net = SuperNet::new(&default_plan(5), &ModuleId::ALGORITHMS, random_modules(31)).unwrap();
    let normal = Normal::new(0.0f32, 0.5).unwrap();
    for step in &mut net.steps {
        for slot in &mut step.slots {
            slot.logit = normal.sample(rng);
            slot.params = random_params(slot.params.len(), rng);
        }
    }
    // one pruned slot exercises the masked softmax
    net.steps[3].slots[2].valid = false;

    let mosaic = random_tensor(8, 8, 1, rng);
    let pass = net.forward_pass(&Image::raw(mosaic.clone()).unwrap()).unwrap();
    let w: Vec<f64> = (0..pass.output.len()).map(|_| rng.random_range(0.5..1.5)).collect();
    let wt = Tensor::from_vec(8, 8, 3, w.iter().map(|&v| v as f32).collect()).unwrap();
    let grads = net.backward_pass(pass, &wt).unwrap();

    let x64 = T::from_tensor(&mosaic);
    let state = NetState::of(&net);
    let objective = |x: &T, s: &NetState| oracle::project(&oracle::supernet(&net, s, x), &w);

    let mut xv = x64.d.clone();
    let num_x: Vec<f64> = (0..xv.len())
        .map(|i| {
            oracle::central(&mut xv, i, FD_EPS, |v| objective(&T { d: v.to_vec(), ..x64.clone() }, &state))
        })
        .collect();
    let ana_x: Vec<f64> = grads.input.data().iter().map(|&v| v as f64).collect();

    let (mut ana_p, mut num_p, mut ana_z, mut num_z) = (vec![], vec![], vec![], vec![]);
    for k in 0..net.steps.len() {
        let dz = net.logit_grad(k, &grads.alpha[k]);
        for j in 0..net.steps[k].slots.len() {
            let mut s = state.clone();
            let mut zv = s.logits[k].clone();
            num_z.push(oracle::central(&mut zv, j, FD_EPS, |v| {
                s.logits[k] = v.to_vec();
                objective(&x64, &s)
            }));
            ana_z.push(dz[j]);
            for i in 0..net.steps[k].slots[j].params.len() {
                let mut s = state.clone();
                let mut pv = s.params[k][j].clone();
                num_p.push(oracle::central(&mut pv, i, FD_EPS, |v| {
                    s.params[k][j] = v.to_vec();
                    objective(&x64, &s)
                }));
                ana_p.push(grads.params[k][j][i] as f64);
            }
        }
    }
    (
        worst_relative(&ana_x, &num_x).0,
        worst_relative(&ana_p, &num_p).0,
        worst_relative(&ana_z, &num_z).0,
    )
}

pub fn gradient_suite(_: &mut Fixtures) -> Verdict {
    let t0 = Instant::now();
    let mut rng = seeded(2024);
    let mods = random_modules(17);
    let mut worst = (0.0f64, ModuleId::Skip);
    let mut failures = Vec::new();
    for module in ModuleId::all() {
        match check_module(module, &mods, &mut rng) {
            Ok(e) => {
                if e > GRAD_TOL {
                    failures.push(format!("{module} {e:.1e}"));
                }
                if e > worst.0 {
                    worst = (e, module);
                }
            }
            Err(msg) => failures.push(msg),
        }
    }
    let (ex, ep, ez) = check_supernet(&mut rng);
    for (what, e) in [("supernet input", ex), ("supernet params", ep), ("supernet logits", ez)] {
        if e > GRAD_TOL {
            failures.push(format!("{what} {e:.1e}"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    Verdict::new(
        failures.is_empty() && secs < 120.0,
        format!(
            "23 operators/stand-ins worst {:.1e} ({}), supernet input {ex:.1e} params {ep:.1e} logits {ez:.1e}; \
             tolerance {GRAD_TOL:.0e} relative in < 120 s{}",
            worst.0,
            worst.1,
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    )
}

pub fn one_hot_collapse(_: &mut Fixtures) -> Verdict {
    let mut rng = seeded(33);
    let template = SuperNet::new(&default_plan(5), &ModuleId::ALGORITHMS, random_modules(5)).unwrap();
    let mut mismatches = 0;
    for trial in 0..20 {
        let mut net = template.clone();
        let mut steps = Vec::new();
        for k in 0..net.steps.len() {
            for slot in &mut net.steps[k].slots {
                slot.params = random_params(slot.params.len(), &mut rng);
            }
            let j = rng.random_range(0..net.steps[k].slots.len());
            net.set_one_hot(k, j);
            let slot = &net.steps[k].slots[j];
            steps.push(PipelineStep::new(slot.module, slot.params.clone()));
        }
        let cfg = PipelineConfig::new(steps, Domain::BayerRaw).unwrap();
        let scene = synth_scene(16, 16, &mut seeded(700 + trial));
        let input = Image::raw(mosaic_rggb(&scene).unwrap()).unwrap();
        let (mixed, _) = net.forward(&input).unwrap();
        let direct = run_pipeline(&cfg, &input, RunMode::Proxy, &net.modules).unwrap();
        let same = mixed.tensor.shape() == direct.tensor.shape()
            && mixed.tensor.data().iter().zip(direct.tensor.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            mismatches += 1;
        }
    }
    Verdict::new(
        mismatches == 0,
        format!("{} of 20 random one-hot configurations bit-identical to sequential execution", 20 - mismatches),
    )
}

pub fn pruning_semantics(_: &mut Fixtures) -> Verdict {
    let eta = 0.2;
    // uniform weights at every step of the full-pool network
    let mods = SearchModules {
        proxies: ProxySet::untrained(&ModuleId::ALGORITHMS, &ProxyArch::compact(), 0).unwrap(),
        learned: LearnedModules::initialised(0, true),
    };
    let full = SuperNet::new(&default_plan(5), &ModuleId::ALGORITHMS, mods).unwrap();
    let mut uniform = full.clone();
    let uniform_ok = uniform.prune(eta).is_empty();

    // weights (0.5, 0.3, 0.15, 0.05): only the last is at or below 0.2 x 0.5
    let pool = [ModuleId::Gamma, ModuleId::Reinhard, ModuleId::Crysisengine];
    let proxies = ProxySet::untrained(&pool, &ProxyArch::compact(), 0).unwrap();
    let mut four =
        SuperNet::new(&[StepPlan::SRGB_SRGB], &pool, SearchModules { proxies, learned: LearnedModules::empty() })
            .unwrap();
    for (s, a) in four.steps[0].slots.iter_mut().zip([0.5f32, 0.3, 0.15, 0.05]) {
        s.logit = a.ln();
    }
    let removed = four.prune(eta);
    let four_ok = four.steps[0].slots.len() == 4 && removed == vec![(0, ModuleId::Skip)];

    // randomised weights, masks and thresholds
    let mut rng = seeded(44);
    let mut argmax_lost = 0;
    let mut wrong_set = 0;
    for _ in 0..10_000 {
        let mut net = full.clone();
        let spread: f32 = rng.random_range(0.05..6.0);
        let normal = Normal::new(0.0f32, spread).unwrap();
        for step in &mut net.steps {
            for slot in &mut step.slots {
                slot.logit = normal.sample(&mut rng);
                slot.valid = rng.random_bool(0.8);
            }
            let keep = rng.random_range(0..step.slots.len());
            step.slots[keep].valid = true;
        }
        let eta: f32 = rng.random_range(0.01..0.99);
        let before: Vec<(Vec<f32>, usize, Vec<bool>)> = (0..net.steps.len())
            .map(|k| (net.alpha(k), net.argmax(k), net.steps[k].slots.iter().map(|s| s.valid).collect()))
            .collect();
        net.prune(eta);
        for (k, (alpha, best, valid)) in before.into_iter().enumerate() {
            let slots = &net.steps[k].slots;
            if !slots[best].valid {
                argmax_lost += 1;
            }
            let top = alpha.iter().zip(&valid).filter(|(_, &v)| v).map(|(a, _)| *a).fold(f32::MIN, f32::max);
            for j in 0..slots.len() {
                let expect_valid = valid[j] && (alpha[j] == top || alpha[j] > eta * top);
                if slots[j].valid != expect_valid {
                    wrong_set += 1;
                }
            }
        }
    }
    Verdict::new(
        uniform_ok && four_ok && argmax_lost == 0 && wrong_set == 0,
        format!(
            "uniform pruned none: {uniform_ok}; (0.5, 0.3, 0.15, 0.05) pruned exactly the 0.05 slot: {four_ok}; \
             10000 random draws: argmax pruned {argmax_lost} times, {wrong_set} slots off the threshold rule (exact)"
        ),
    )
}

const PLANTED_POOL: [ModuleId; 6] = [
    ModuleId::MedianBayer,
    ModuleId::Nearest,
    ModuleId::Bilinear,
    ModuleId::Gamma,
    ModuleId::Crysisengine,
    ModuleId::Linear,
];
const PLANTED_PLAN: [StepPlan; 3] = [StepPlan::RAW_RAW, StepPlan::RAW_SRGB, StepPlan::SRGB_SRGB];
const PLANTED_SEED: u64 = 5;
/// Allowed PSNR shortfall of the searched pipeline against the best
/// exhaustively fine-tuned one.
const PLANTED_TOL_DB: f64 = 1.0;

fn planted_pipeline() -> PipelineConfig {
    let gamma = ModuleId::Gamma.descriptor().params[0].to_normalized(2.2);
    PipelineConfig::new(
        vec![
            PipelineStep::new(ModuleId::Skip, vec![]),
            PipelineStep::new(ModuleId::Bilinear, vec![]),
            PipelineStep::new(ModuleId::Gamma, vec![gamma]),
        ],
        Domain::BayerRaw,
    )
    .unwrap()
}

/// Clean mosaics and their images under the planted pipeline.
fn planted_data(modules: &SearchModules) -> Vec<Sample> {
    let planted = planted_pipeline();
    let mut rng = seeded(PLANTED_SEED);
    (0..32)
        .map(|_| {
            let input = Image::raw(mosaic_rggb(&synth_scene(16, 16, &mut rng)).unwrap()).unwrap();
            let target = run_pipeline(&planted, &input, RunMode::Original, modules).unwrap().tensor;
            (input, target)
        })
        .collect()
}

fn planted_config() -> SearchConfig {
    SearchConfig {
        k: 3,
        plan: PLANTED_PLAN.to_vec(),
        iterations: 5000,
        lr: 1e-2,
        batch: 4,
        tp: 20,
        proxy_arch: proxy_arch(),
        pool: PLANTED_POOL.to_vec(),
        seed: PLANTED_SEED,
        ..Default::default()
    }
}

/// Coarse then fine Adam fine-tuning; each phase keeps the best evaluated
/// parameters, so the result never scores below the starting point.
fn two_phase_finetune(cfg: &PipelineConfig, modules: &SearchModules, data: &[Sample], seed: u64) -> PipelineConfig {
    let mut cfg = cfg.clone();
    for lr in [1e-2, 1e-3] {
        let opts = FinetuneOptions { steps: 300, lr, batch: 4, eval_every: 20, seed };
        cfg = finetune_parameters(&cfg, modules, data, &L2, &opts).unwrap().config;
    }
    cfg
}

/// One full planted-pipeline search. Returns the extracted pipeline and
/// records its serialised form and α history for the determinism check.
fn planted_search(fx: &mut Fixtures, label: &str) -> (PipelineConfig, Vec<Sample>) {
    let modules = fx.trained().clone();
    let data = planted_data(&modules);
    let cfg = planted_config();
    let net = SuperNet::new(&cfg.plan, &cfg.pool, modules).unwrap();
    let run = fx.audited_search(label, net, &cfg, &data);
    let hash = stable_hash(&cfg.to_text());
    let extracted = extract_pipeline(&run.net, cfg.seed, &hash).unwrap();
    let alphas: Vec<String> = run.history.iter().map(|r| serde_json::to_string(&r.alpha).unwrap()).collect();
    fx.planted_runs.push((extracted.to_json().unwrap(), alphas.join("\n")));
    (extracted, data)
}

pub fn planted_recovery(fx: &mut Fixtures) -> Verdict {
    let (extracted, data) = planted_search(fx, "planted");
    let modules = fx.trained().clone();
    let tuned = two_phase_finetune(&extracted, &modules, &data, PLANTED_SEED);
    let searched_psnr = mean_psnr(&tuned, &modules, &data);

    let per_step: Vec<Vec<ModuleId>> = PLANTED_PLAN.iter().map(|&p| candidates(p, &PLANTED_POOL)).collect();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut enumerated = 0;
    for a in &per_step[0] {
        for b in &per_step[1] {
            for c in &per_step[2] {
                let steps = [*a, *b, *c]
                    .iter()
                    .map(|&m| PipelineStep::new(m, m.descriptor().default_params().0))
                    .collect();
                let cfg = PipelineConfig::new(steps, Domain::BayerRaw).unwrap();
                let p = mean_psnr(&two_phase_finetune(&cfg, &modules, &data, PLANTED_SEED), &modules, &data);
                enumerated += 1;
                if p > best.0 {
                    best = (p, cfg.modules());
                }
            }
        }
    }
    let recovered = extracted.modules() == planted_pipeline().modules();
    Verdict::new(
        recovered && searched_psnr >= best.0 - PLANTED_TOL_DB,
        format!(
            "extracted {} (planted {}); fine-tuned {searched_psnr:.2} dB vs best of {enumerated} enumerated {:.2} dB ({}), \
             tolerance {PLANTED_TOL_DB} dB",
            names(&extracted.modules()),
            names(&planted_pipeline().modules()),
            best.0,
            names(&best.1)
        ),
    )
}

const LOW_LIGHT_SIZE: usize = 32;
const LOW_LIGHT_ITERATIONS: usize = 2000;
const LOW_LIGHT_SEED: u64 = 6;
/// Required gain of the searched pipeline over the naive baseline.
const RESTORATION_MARGIN_DB: f64 = 3.0;
/// Allowed PSNR excess of the latency-penalised search.
const TRADEOFF_SLACK_DB: f64 = 0.1;
/// Required gain of proxy tuning.
const TUNING_MARGIN_DB: f64 = 0.3;

fn low_light_sets() -> (Vec<Sample>, Vec<Sample>) {
    (low_light(200, LOW_LIGHT_SIZE, 600), low_light(100, LOW_LIGHT_SIZE, 601))
}

/// Bilinear demosaicking of the compensated capture followed by the 1/2.2
/// display gamma.
fn naive_baseline() -> PipelineConfig {
    let gamma = ModuleId::Gamma.descriptor().params[0].to_normalized(1.0 / 2.2);
    PipelineConfig::new(
        vec![PipelineStep::new(ModuleId::Bilinear, vec![]), PipelineStep::new(ModuleId::Gamma, vec![gamma])],
        Domain::BayerRaw,
    )
    .unwrap()
}

/// Full-pool K = 5 search on the 200 training patches, extraction,
/// fine-tuning, and PSNR on the held-out patches.
fn low_light_run(fx: &mut Fixtures, label: &str, beta: f32, proxy_tuning: bool) -> LowLightResult {
    let latency = fx.latency();
    let modules = fx.trained().clone();
    let (train, test) = low_light_sets();
    let cfg = SearchConfig {
        iterations: LOW_LIGHT_ITERATIONS,
        lr: 1e-2,
        batch: 4,
        tp: 20,
        beta,
        proxy_tuning,
        proxy_arch: proxy_arch(),
        seed: LOW_LIGHT_SEED,
        ..Default::default()
    };
    let mut net = SuperNet::new(&cfg.plan, &cfg.pool, modules).unwrap();
    net.latency = latency;
    let run = fx.audited_search(label, net, &cfg, &train);
    let extracted = extract_pipeline(&run.net, cfg.seed, &stable_hash(&cfg.to_text())).unwrap();
    let search_modules = run.net.modules.clone();
    let opts = FinetuneOptions { steps: 200, lr: 5e-3, batch: 4, eval_every: 20, seed: LOW_LIGHT_SEED };
    let tuned = finetune_parameters(&extracted, &search_modules, &train, &L2, &opts).unwrap().config;
    let psnr = mean_psnr(&tuned, &search_modules, &test);
    let latency = tuned.metadata.latency.expect("every module has a latency entry");
    eprintln!("  {label}: {} -> {psnr:.2} dB, {latency:.4} s/MP", names(&tuned.modules()));
    LowLightResult { pipeline: tuned, psnr, latency }
}

fn names(m: &[ModuleId]) -> String {
    m.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(" > ")
}

fn low_light_base(fx: &mut Fixtures) -> LowLightResult {
    if fx.lowlight_base.is_none() {
        let r = low_light_run(fx, "low-light beta 0", 0.0, true);
        fx.lowlight_base = Some(r);
    }
    fx.lowlight_base.clone().unwrap()
}

pub fn restoration_improvement(fx: &mut Fixtures) -> Verdict {
    let searched = low_light_base(fx);
    let (_, test) = low_light_sets();
    let baseline = mean_psnr(&naive_baseline(), &fx.trained().clone(), &test);
    let gain = searched.psnr - baseline;
    Verdict::new(
        gain >= RESTORATION_MARGIN_DB,
        format!(
            "searched {} {:.2} dB vs naive baseline {baseline:.2} dB on 100 held-out patches: +{gain:.2} dB, \
             required +{RESTORATION_MARGIN_DB} dB",
            names(&searched.pipeline.modules()),
            searched.psnr
        ),
    )
}

pub fn efficiency_tradeoff(fx: &mut Fixtures) -> Verdict {
    let base = low_light_base(fx);
    let fast = low_light_run(fx, "low-light beta 0.28", 0.28, true);
    Verdict::new(
        fast.latency < base.latency && fast.psnr <= base.psnr + TRADEOFF_SLACK_DB,
        format!(
            "beta 0.28: {:.4} s/MP, {:.2} dB; beta 0: {:.4} s/MP, {:.2} dB; need lower latency and PSNR at most \
             +{TRADEOFF_SLACK_DB} dB",
            fast.latency, fast.psnr, base.latency, base.psnr
        ),
    )
}

pub fn proxy_tuning_ablation(fx: &mut Fixtures) -> Verdict {
    let on = low_light_base(fx);
    let off = low_light_run(fx, "low-light without proxy tuning", 0.0, false);
    let gain = on.psnr - off.psnr;
    // tuning only touches proxies, so a chain without proxied modules
    // cannot benefit from it
    let proxied = |r: &LowLightResult| r.pipeline.modules().iter().filter(|m| m.descriptor().needs_proxy()).count();
    Verdict::new(
        gain >= TUNING_MARGIN_DB,
        format!(
            "tuning on {:.2} dB ({}), off {:.2} dB ({}): {gain:+.2} dB, required +{TUNING_MARGIN_DB} dB; proxied modules extracted: on {}, off {}",
            on.psnr,
            names(&on.pipeline.modules()),
            off.psnr,
            names(&off.pipeline.modules()),
            proxied(&on),
            proxied(&off)
        ),
    )
}

pub fn memory_invariants(fx: &mut Fixtures) -> Verdict {
    if !fx.audits.iter().any(|a| a.evicted > 0) {
        // a short full-pool search that overflows the memory several times
        let modules = fx.trained().clone();
        let ds = low_light(200, 16, 77);
        let cfg = SearchConfig { iterations: 300, lr: 1e-2, batch: 4, proxy_arch: proxy_arch(), seed: 77, ..Default::default() };
        let net = SuperNet::new(&cfg.plan, &cfg.pool, modules).unwrap();
        fx.audited_search("memory audit", net, &cfg, &ds);
    }
    let violations: Vec<String> = fx
        .audits
        .iter()
        .flat_map(|a| a.violations.iter().map(move |v| format!("{}: {v}", a.label)))
        .collect();
    let iterations: usize = fx.audits.iter().map(|a| a.iterations).sum();
    let evicted: u64 = fx.audits.iter().map(|a| a.evicted).sum();
    let max_len = fx.audits.iter().map(|a| a.max_len).max().unwrap_or(0);
    Verdict::new(
        violations.is_empty() && max_len <= MEMORY_BOUND && evicted > 0,
        format!(
            "{} audited searches, {iterations} iterations, {evicted} evictions: max |M| = {max_len} (bound {MEMORY_BOUND}), \
             {} FIFO violations (exact){}",
            fx.audits.len(),
            violations.len(),
            violations.first().map(|v| format!("; first: {v}")).unwrap_or_default()
        ),
    )
}

pub fn determinism(fx: &mut Fixtures) -> Verdict {
    if fx.planted_runs.is_empty() {
        planted_search(fx, "planted");
    }
    planted_search(fx, "planted (repeat)");
    let (a, b) = (&fx.planted_runs[0], &fx.planted_runs[fx.planted_runs.len() - 1]);
    let same_cfg = a.0.as_bytes() == b.0.as_bytes();
    let same_hist = a.1.as_bytes() == b.1.as_bytes();
    Verdict::new(
        same_cfg && same_hist,
        format!(
            "two seeded planted runs: pipeline JSON identical {same_cfg}, alpha history identical {same_hist} \
             ({} bytes, byte-exact)",
            b.1.len()
        ),
    )
}

/// Exposure-compensated noisy captures (ratio 50) with clean targets.
fn low_light(count: usize, size: usize, seed: u64) -> Vec<Sample> {
    low_light_dataset(count, size, LOW_LIGHT_RATIO, LOW_LIGHT_NOISE, seed)
        .unwrap()
        .into_iter()
        .map(|s| (Image::raw(s.input).unwrap(), s.target))
        .collect()
}
