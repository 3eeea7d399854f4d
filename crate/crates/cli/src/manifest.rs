use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use cwkd_core::trainer::ExperimentConfig;
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct Versions {
    pub cwkd_core: &'static str,
    pub cwkd_cli: &'static str,
    pub checkpoint_format: &'static str,
    pub dataset_format: &'static str,
    pub tensor_dump_format: &'static str,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            cwkd_core: cwkd_core::VERSION,
            cwkd_cli: env!("CARGO_PKG_VERSION"),
            checkpoint_format: cwkd_core::models::MANIFEST_FORMAT,
            dataset_format: cwkd_core::data::INDEX_FORMAT,
            tensor_dump_format: "CWT1",
        }
    }
}

/// Written as `manifest.json` next to every command's artifacts. Contains no
/// timestamps or host information, so identical invocations produce
/// identical manifests.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub arguments: serde_json::Value,
    pub config: Option<ExperimentConfig>,
    pub seeds: Vec<u64>,
    pub versions: Versions,
}

impl Manifest {
    pub fn new(command: &str, arguments: serde_json::Value, config: Option<&ExperimentConfig>, seeds: Vec<u64>) -> Self {
        Self {
            command: command.to_string(),
            arguments,
            config: config.cloned(),
            seeds,
            versions: Versions::default(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
