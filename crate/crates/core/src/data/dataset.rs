//! On-disk low-light datasets: `NNNN.pgm` + `NNNN.json` captures, their
//! `NNNN_target.png` ground truth and a `dataset.json` summary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::{load_png, load_raw, save_png, save_raw};
use super::synth::{exposure_compensate, LowLightSample, NoiseParams};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub count: usize,
    pub size: usize,
    pub ratio: f32,
    pub noise: NoiseParams,
    pub seed: u64,
}

pub const DATASET_FILE: &str = "dataset.json";

pub fn save_dataset(dir: &Path, info: &DatasetInfo, samples: &[LowLightSample]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        save_raw(&dir.join(format!("{i:04}.pgm")), &s.raw)?;
        save_png(&dir.join(format!("{i:04}_target.png")), &s.target)?;
    }
    std::fs::write(dir.join(DATASET_FILE), serde_json::to_string_pretty(info)?)?;
    Ok(())
}

/// Loads every sample; inputs are exposure-compensated with the ratio
/// stored in each capture's sidecar.
pub fn load_dataset(dir: &Path) -> Result<(DatasetInfo, Vec<LowLightSample>)> {
    let info_path = dir.join(DATASET_FILE);
    if !info_path.exists() {
        return Err(Error::MissingFile(info_path));
    }
    let info: DatasetInfo = serde_json::from_str(&std::fs::read_to_string(&info_path)?)?;
    let samples = (0..info.count)
        .map(|i| {
            let raw = load_raw(&dir.join(format!("{i:04}.pgm")))?;
            let target = load_png(&dir.join(format!("{i:04}_target.png")))?;
            let input = exposure_compensate(&raw.bayer, raw.meta.ratio);
            Ok(LowLightSample { raw, input, target })
        })
        .collect::<Result<_>>()?;
    Ok((info, samples))
}

/// Every `*.png` in `dir`, sorted by file name.
pub fn load_png_dir(dir: &Path) -> Result<Vec<crate::tensor::Tensor>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no PNG images in {}", dir.display())));
    }
    paths.iter().map(|p| load_png(p)).collect()
}
