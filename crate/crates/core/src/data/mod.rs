//! Synthetic RAW data, file formats and latency benchmarking.

pub mod dataset;
pub mod io;
pub mod latency;
pub mod synth;

pub use dataset::{load_dataset, load_png_dir, save_dataset, DatasetInfo, DATASET_FILE};
pub use io::{load_png, load_raw, parse_pgm, raw_sidecar_path, save_png, save_raw};
pub use latency::{benchmark_latency, time_median, LatencyEnv, LatencyTable};
pub use synth::{
    exposure_compensate, low_light_dataset, synth_scene, synthesize_raw, LowLightSample, NoiseParams,
    RawMeta, RawSample,
};
