//! Per-module CPU cost in seconds per megapixel.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::synth::synth_scene;
use crate::error::{Error, Result};
use crate::image::{mosaic_rggb, Domain, Image};
use crate::modules::{apply_original, LearnedModules, ModuleId};
use crate::rng::seeded;

/// Smallest entry ever recorded; keeps near-free modules strictly positive.
const MIN_SECONDS_PER_MP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyEnv {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub threads: usize,
    pub height: usize,
    pub width: usize,
    pub repeats: usize,
}

impl LatencyEnv {
    fn current(height: usize, width: usize, repeats: usize) -> Self {
        LatencyEnv {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            threads: rayon::current_num_threads(),
            height,
            width,
            repeats,
        }
    }
}

/// Serialises as `{"<module>": seconds_per_mp, ..., "env": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub env: LatencyEnv,
    #[serde(flatten)]
    pub entries: BTreeMap<String, f64>,
}

impl LatencyTable {
    pub fn get(&self, module: ModuleId) -> Option<f64> {
        self.entries.get(module.as_str()).copied()
    }

    /// Entries keyed by module, failing on unknown names or non-positive values.
    pub fn by_module(&self) -> Result<BTreeMap<ModuleId, f64>> {
        self.entries
            .iter()
            .map(|(k, &v)| {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::Config(format!("latency for {k} must be > 0, got {v}")));
                }
                Ok((k.parse()?, v))
            })
            .collect()
    }

    /// Summed entries of a module chain.
    pub fn chain_total(&self, chain: &[ModuleId]) -> Result<f64> {
        chain
            .iter()
            .map(|&m| self.get(m).ok_or_else(|| Error::Config(format!("no latency entry for {m}"))))
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let table: LatencyTable = serde_json::from_str(&text)?;
        table.by_module()?;
        Ok(table)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) }
}

/// Test input of the right domain for `module`; skip gets sRGB.
pub(crate) fn bench_input(module: ModuleId, height: usize, width: usize, seed: u64) -> Result<Image> {
    let rgb = synth_scene(height, width, &mut seeded(seed));
    match module.descriptor().domain_in {
        Some(Domain::BayerRaw) => Image::raw(mosaic_rggb(&rgb)?),
        _ => Image::srgb(rgb),
    }
}

/// Median wall time of `repeats` runs of `f`, after one warm-up call.
pub fn time_median<F: FnMut() -> Result<()>>(repeats: usize, mut f: F) -> Result<f64> {
    f()?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        f()?;
        times.push(t0.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

/// Times each module at its default parameters on a `height x width`
/// synthetic image, one module at a time.
pub fn benchmark_latency(
    modules: &[ModuleId],
    height: usize,
    width: usize,
    repeats: usize,
    learned: &LearnedModules,
) -> Result<LatencyTable> {
    if repeats < 5 {
        return Err(Error::Config(format!("latency benchmark needs at least 5 repeats, got {repeats}")));
    }
    let mp = (height * width) as f64 / 1e6;
    let mut entries = BTreeMap::new();
    for &m in modules {
        let input = bench_input(m, height, width, 7)?;
        let params = m.descriptor().default_params();
        let secs = time_median(repeats, || {
            std::hint::black_box(apply_original(m, &input, &params, learned)?);
            Ok(())
        })?;
        entries.insert(m.as_str().to_string(), (secs / mp).max(MIN_SECONDS_PER_MP));
    }
    Ok(LatencyTable { env: LatencyEnv::current(height, width, repeats), entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn json_shape_is_flat() {
        let t = LatencyTable {
            env: LatencyEnv::current(8, 8, 5),
            entries: [("gamma".to_string(), 0.5)].into_iter().collect(),
        };
        let v: serde_json::Value = serde_json::to_value(&t).unwrap();
        assert_eq!(v["gamma"], 0.5);
        assert!(v["env"].is_object());
        let back: LatencyTable = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.by_module().unwrap()[&ModuleId::Gamma], 0.5);
    }

    #[test]
    fn too_few_repeats() {
        assert!(benchmark_latency(&[ModuleId::Skip], 8, 8, 4, &LearnedModules::empty()).is_err());
    }
}
