use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use ispsearch::data::{
    benchmark_latency, load_dataset, load_png, load_png_dir, load_raw, low_light_dataset, save_dataset, save_png,
    save_raw, exposure_compensate, DatasetInfo, LatencyTable, NoiseParams, RawMeta, RawSample,
};
use ispsearch::metrics::{psnr, psnr_gray, ssim, to_gray};
use ispsearch::modules::{learned, LearnedKind, LearnedModules};
use ispsearch::pipeline::{
    extract_pipeline, finetune_parameters, run_pipeline, stable_hash, FinetuneOptions, PipelineConfig, RunMode,
};
use ispsearch::proxy::{corpus_for, train_proxy, ProxyArch, ProxySet, ProxyTrainConfig};
use ispsearch::rng::seeded;
use ispsearch::supernet::{save_checkpoint, Sample, Search, SearchConfig, SearchModules, SuperNet, L2};
use ispsearch::{Domain, Error, Image, ModuleId, Result, Tensor};

use crate::args::*;
use crate::manifest::ManifestBuilder;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn load_learned(dir: Option<&Path>) -> Result<LearnedModules> {
    match dir {
        Some(d) => LearnedModules::load_dir(d),
        None => Ok(LearnedModules::empty()),
    }
}

fn load_proxies(dir: Option<&Path>, modules: &[ModuleId]) -> Result<ProxySet> {
    match dir {
        Some(d) => ProxySet::load_dir(d, modules),
        None => Ok(ProxySet::default()),
    }
}

/// Dataset samples as RAW inputs with their sRGB targets.
fn load_samples(dir: &Path) -> Result<Vec<Sample>> {
    let (_, samples) = load_dataset(dir)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("dataset {} is empty", dir.display())));
    }
    samples.into_iter().map(|s| Ok((Image::raw(s.input)?, s.target))).collect()
}

/// Parses `key = value` lines into a JSON object, reading each value as
/// JSON when possible and as a string otherwise.
fn parse_flat(text: &str) -> Result<serde_json::Map<String, Value>> {
    let mut map = serde_json::Map::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let v = v.trim();
        map.insert(k.trim().to_string(), serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.into())));
    }
    Ok(map)
}

fn proxy_train_config(path: Option<&Path>) -> Result<ProxyTrainConfig> {
    let mut cfg = ProxyTrainConfig::default();
    let Some(path) = path else { return Ok(cfg) };
    let mut base = serde_json::to_value(&cfg)?;
    let obj = base.as_object_mut().expect("struct serialises to an object");
    for (k, v) in parse_flat(&read_text(path)?)? {
        if !obj.contains_key(&k) {
            return Err(Error::Config(format!("unknown proxy training key `{k}`")));
        }
        let v = match (k.as_str(), &v) {
            ("arch", Value::String(s)) if s == "srcnn" => serde_json::to_value(ProxyArch::srcnn())?,
            ("arch", Value::String(s)) if s == "compact" => serde_json::to_value(ProxyArch::compact())?,
            ("arch", Value::String(s)) => return Err(Error::Config(format!("unknown proxy arch `{s}`"))),
            _ => v,
        };
        obj.insert(k, v);
    }
    cfg = serde_json::from_value(base).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

pub fn proxy_train(a: &ProxyTrainArgs) -> Result<()> {
    let rgb = load_png_dir(&a.corpus)?;
    let mut cfg = proxy_train_config(a.config.as_deref())?;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    let modules: Vec<ModuleId> = if a.modules.is_empty() {
        ModuleId::ALGORITHMS.into_iter().filter(|m| m.descriptor().needs_proxy()).collect()
    } else {
        a.modules.iter().map(|s| s.parse()).collect::<Result<_>>()?
    };
    if let Some(m) = modules.iter().find(|m| !m.descriptor().needs_proxy()) {
        return Err(Error::Config(format!("{m} is differentiable and takes no proxy")));
    }
    create_out(&a.out)?;
    let split = if rgb.len() > 1 { rgb.len() - (rgb.len() / 5).max(1) } else { 1 };
    let (train_rgb, hold_rgb) = (&rgb[..split], if rgb.len() > 1 { &rgb[split..] } else { &rgb[..] });
    let mut manifest = ManifestBuilder::new("proxy-train", a.config.as_deref(), Some(a.seed));
    manifest.input(&a.corpus);
    let mut reports = Vec::new();
    for (i, &m) in modules.iter().enumerate() {
        let outcome = train_proxy(
            m,
            &corpus_for(m, train_rgb)?,
            &corpus_for(m, hold_rgb)?,
            &cfg,
            a.seed.wrapping_add(i as u64),
        )?;
        log::info!("{m}: held-out PSNR {:.2} dB", outcome.report.psnr);
        let path = a.out.join(ispsearch::proxy::ProxyNet::file_name(m));
        outcome.proxy.save(&path)?;
        manifest.output(path);
        reports.push(outcome.report);
    }
    let report = a.out.join("fidelity.json");
    write_json(&report, &reports)?;
    manifest.output(report).write(&a.out)
}

pub fn learned_train(a: &LearnedTrainArgs) -> Result<()> {
    let rgb = load_png_dir(&a.corpus)?;
    create_out(&a.out)?;
    let mut modules = LearnedModules::empty();
    let mut rng = seeded(a.seed);
    let mut report = serde_json::Map::new();
    for (i, kind) in LearnedKind::ALL.into_iter().enumerate() {
        let pairs = learned::training_pairs(kind, &rgb, a.sigma, &mut rng)?;
        let r = learned::train(&mut modules, kind, &pairs, a.steps, a.batch, a.lr, a.seed.wrapping_add(i as u64))?;
        log::info!("{}: loss {:.3e} -> {:.3e}", kind.as_str(), r.initial_loss, r.final_loss);
        report.insert(kind.as_str().into(), json!({"initial_loss": r.initial_loss, "final_loss": r.final_loss}));
    }
    modules.save_dir(&a.out)?;
    let path = a.out.join("training.json");
    write_json(&path, &report)?;
    let mut manifest = ManifestBuilder::new("learned-train", None, Some(a.seed));
    manifest.input(&a.corpus).output(path);
    for kind in LearnedKind::ALL {
        manifest.output(a.out.join(kind.file_name()));
    }
    manifest.write(&a.out)
}

pub fn resolve_search_config(a: &SearchArgs) -> Result<SearchConfig> {
    let mut cfg = match &a.config {
        Some(p) => SearchConfig::parse(&read_text(p)?)?,
        None => SearchConfig::default(),
    };
    if let Some(p) = a.preset {
        cfg.set("preset", p.name())?;
    }
    if let Some(b) = a.beta {
        cfg.beta = b;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.steps {
        cfg.iterations = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn search(a: &SearchArgs) -> Result<()> {
    let cfg = resolve_search_config(a)?;
    if cfg.plan[0].input != Domain::BayerRaw {
        return Err(Error::Config("datasets hold RAW captures; the plan must start from raw".into()));
    }
    let data = load_samples(&a.data)?;
    let latency = a.latency.as_deref().map(LatencyTable::load).transpose()?;
    if cfg.beta > 0.0 && latency.is_none() {
        return Err(Error::Config("beta > 0 needs a latency table (--latency)".into()));
    }
    let modules = SearchModules {
        proxies: load_proxies(Some(&a.proxies), &cfg.pool)?,
        learned: load_learned(a.learned.as_deref())?,
    };
    let mut net = SuperNet::new(&cfg.plan, &cfg.pool, modules)?;
    if let Some(t) = &latency {
        net.latency = t.by_module()?;
    }
    create_out(&a.out)?;
    let mut history = String::new();
    let mut s = Search::new(net, cfg.clone())?;
    let mut record_err = None;
    s.run(&data, &L2, |r, _| {
        match serde_json::to_string(r) {
            Ok(line) => {
                history.push_str(&line);
                history.push('\n');
            }
            Err(e) => record_err = Some(e),
        }
        if r.iteration % 50 == 0 {
            log::info!("iteration {}: loss {:.4e}", r.iteration, r.loss);
        }
    })?;
    if let Some(e) = record_err {
        return Err(e.into());
    }
    let pipeline = extract_pipeline(&s.net, cfg.seed, &stable_hash(&cfg.to_text()))?;

    let mut manifest = ManifestBuilder::new("search", a.config.as_deref(), Some(cfg.seed));
    manifest.input(&a.data).input(&a.proxies);
    let outputs: Vec<PathBuf> = ["checkpoint.ispw", "checkpoint.json", "history.jsonl", "pipeline.json", "config.txt"]
        .iter()
        .map(|f| a.out.join(f))
        .collect();
    save_checkpoint(&s.net, &outputs[0])?;
    std::fs::write(&outputs[2], history)?;
    pipeline.save(&outputs[3])?;
    std::fs::write(&outputs[4], cfg.to_text())?;
    for o in outputs {
        manifest.output(o);
    }
    println!("{}", pipeline.modules().iter().map(|m| m.as_str()).collect::<Vec<_>>().join(" -> "));
    manifest.write(&a.out)
}

pub fn finetune(a: &FinetuneArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&a.pipeline)?;
    let data = load_samples(&a.data)?;
    let modules = SearchModules {
        proxies: load_proxies(a.proxies.as_deref(), &cfg.modules())?,
        learned: load_learned(a.learned.as_deref())?,
    };
    let opts = FinetuneOptions { steps: a.steps, lr: a.lr, batch: a.batch, seed: a.seed, ..Default::default() };
    let out = finetune_parameters(&cfg, &modules, &data, &L2, &opts)?;
    create_out(&a.out)?;
    let pipe = a.out.join("pipeline.json");
    out.config.save(&pipe)?;
    let report = a.out.join("finetune.json");
    write_json(
        &report,
        &json!({
            "initial_loss": out.initial_loss,
            "final_loss": out.final_loss,
            "evaluations": out.evaluations,
            "skipped_steps": out.skipped_steps,
        }),
    )?;
    println!("loss {:.4e} -> {:.4e}", out.initial_loss, out.final_loss);
    let mut manifest = ManifestBuilder::new("finetune", None, Some(a.seed));
    manifest.input(&a.pipeline).input(&a.data).output(pipe).output(report);
    manifest.write(&a.out)
}

fn load_input(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => {
            let raw = load_raw(path)?;
            Image::raw(exposure_compensate(&raw.bayer, raw.meta.ratio))
        }
        Some("png") => Image::srgb(load_png(path)?),
        _ => Err(Error::Config(format!("{}: expected a .pgm or .png input", path.display()))),
    }
}

fn save_image(dir: &Path, stem: &str, img: &Image) -> Result<PathBuf> {
    match img.domain {
        Domain::Srgb => {
            let p = dir.join(format!("{stem}.png"));
            save_png(&p, &img.tensor)?;
            Ok(p)
        }
        Domain::BayerRaw => {
            let p = dir.join(format!("{stem}.pgm"));
            let meta = RawMeta {
                black_level: 0,
                white_level: u16::MAX,
                ratio: 1.0,
                noise: NoiseParams::default(),
                phase: "RGGB".into(),
            };
            save_raw(&p, &RawSample { bayer: img.tensor.clone(), meta })?;
            Ok(p)
        }
    }
}

/// Mean, median and max absolute per-pixel difference.
fn diff_summary(a: &Tensor, b: &Tensor) -> Result<Value> {
    a.ensure_same_shape(b, "diff")?;
    let mut d: Vec<f32> = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).collect();
    d.sort_by(|x, y| x.total_cmp(y));
    let mean = d.iter().map(|&v| v as f64).sum::<f64>() / d.len().max(1) as f64;
    Ok(json!({
        "mean_abs": mean,
        "median_abs": d.get(d.len() / 2).copied().unwrap_or(0.0),
        "max_abs": d.last().copied().unwrap_or(0.0),
    }))
}

pub fn run(a: &RunArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&a.pipeline)?;
    let input = load_input(&a.input)?;
    let needs_proxy = a.mode != ModeArg::Original;
    let modules = SearchModules {
        proxies: if needs_proxy { load_proxies(a.proxies.as_deref(), &cfg.modules())? } else { ProxySet::default() },
        learned: load_learned(a.learned.as_deref())?,
    };
    create_out(&a.out)?;
    let mut manifest = ManifestBuilder::new("run", None, None);
    manifest.input(&a.pipeline).input(&a.input);
    let mut outputs = Vec::new();
    for (mode, arg, stem) in [
        (RunMode::Original, ModeArg::Original, "output_original"),
        (RunMode::Proxy, ModeArg::Proxy, "output_proxy"),
    ] {
        if a.mode == arg || a.mode == ModeArg::Both {
            let img = run_pipeline(&cfg, &input, mode, &modules)?;
            manifest.output(save_image(&a.out, stem, &img)?);
            outputs.push(img);
        }
    }
    if let [orig, proxy] = &outputs[..] {
        let summary = diff_summary(&orig.tensor, &proxy.tensor)?;
        println!("{summary}");
        let p = a.out.join("diff.json");
        write_json(&p, &summary)?;
        manifest.output(p);
    }
    manifest.write(&a.out)
}

fn pair_metrics(pred: &Tensor, target: &Tensor) -> Result<[f64; 4]> {
    Ok([
        psnr(pred, target)?,
        ssim(pred, target)?,
        psnr_gray(pred, target)?,
        ssim(&to_gray(pred)?, &to_gray(target)?)?,
    ])
}

fn metrics_json(m: [f64; 4], count: usize) -> Value {
    json!({"psnr": m[0], "ssim": m[1], "psnr_gray": m[2], "ssim_gray": m[3], "count": count})
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    create_out(&a.out)?;
    let mut manifest = ManifestBuilder::new("eval", None, None);
    let result = match (&a.pred, &a.target, &a.pipeline, &a.data) {
        (Some(p), Some(t), None, _) => {
            manifest.input(p).input(t);
            metrics_json(pair_metrics(&load_png(p)?, &load_png(t)?)?, 1)
        }
        (None, _, Some(pipe), Some(data)) => {
            manifest.input(pipe).input(data);
            let cfg = PipelineConfig::load(pipe)?;
            let modules = SearchModules { proxies: ProxySet::default(), learned: load_learned(a.learned.as_deref())? };
            let samples = load_samples(data)?;
            let mut sum = [0.0; 4];
            for (x, y) in &samples {
                let out = run_pipeline(&cfg, x, RunMode::Original, &modules)?;
                for (s, v) in sum.iter_mut().zip(pair_metrics(&out.tensor, y)?) {
                    *s += v / samples.len() as f64;
                }
            }
            metrics_json(sum, samples.len())
        }
        _ => return Err(Error::Config("eval needs --pred/--target or --pipeline/--data".into())),
    };
    println!("{result}");
    let p = a.out.join("metrics.json");
    write_json(&p, &result)?;
    manifest.output(p).write(&a.out)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    if a.size < 2 || a.size % 2 != 0 {
        return Err(Error::Config(format!("size must be even and >= 2, got {}", a.size)));
    }
    let noise = NoiseParams { sigma: a.sigma, poisson_scale: a.poisson };
    let samples = low_light_dataset(a.count, a.size, a.ratio, noise, a.seed)?;
    let info = DatasetInfo { count: a.count, size: a.size, ratio: a.ratio, noise, seed: a.seed };
    save_dataset(&a.out, &info, &samples)?;
    let mut manifest = ManifestBuilder::new("synth", None, Some(a.seed));
    manifest.output(a.out.join(ispsearch::data::DATASET_FILE));
    manifest.write(&a.out)
}

pub fn latency(a: &LatencyArgs) -> Result<()> {
    let learned = match &a.learned {
        Some(d) => LearnedModules::load_dir(d)?,
        None => LearnedModules::initialised(0, false),
    };
    let modules: Vec<ModuleId> = ModuleId::all().collect();
    let table = benchmark_latency(&modules, a.size, a.size, a.repeats, &learned)?;
    create_out(&a.out)?;
    let p = a.out.join("latency.json");
    table.save(&p)?;
    let mut manifest = ManifestBuilder::new("latency", None, None);
    manifest.output(p).write(&a.out)
}
