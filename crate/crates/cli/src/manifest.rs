use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub wall_time_secs: f64,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: Option<&Path>, seed: Option<u64>) -> Self {
        Self {
            manifest: RunManifest {
                command: command.into(),
                config: config.map(Path::to_path_buf),
                seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
                version: env!("ISPSEARCH_GIT_DESCRIBE").into(),
                wall_time_secs: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) -> &mut Self {
        self.manifest.inputs.push(p.into());
        self
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) -> &mut Self {
        self.manifest.outputs.push(p.into());
        self
    }

    pub fn write(&mut self, out_dir: &Path) -> ispsearch::Result<()> {
        self.manifest.wall_time_secs = self.started.elapsed().as_secs_f64();
        std::fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }
}
