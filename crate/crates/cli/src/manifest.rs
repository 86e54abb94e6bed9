use std::path::{Path, PathBuf};

use blockpotts::ModelParams;
use serde::{Deserialize, Serialize};

/// Inputs that produced a set of output files; written next to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub params: ModelParams,
    /// Block sizes, for commands that work at finite `N`.
    pub blocks: Option<Vec<usize>>,
    pub seed: u64,
    pub tool_version: String,
    pub timestamp: String,
    pub output_paths: Vec<String>,
    pub rng_algorithm: String,
    /// Fully resolved command settings (flags merged over the config file).
    pub settings: serde_json::Value,
}

impl RunManifest {
    pub fn new(
        command: &str,
        params: &ModelParams,
        blocks: Option<&[usize]>,
        seed: u64,
        settings: serde_json::Value,
        outputs: &[PathBuf],
    ) -> Self {
        Self {
            command: command.to_string(),
            params: params.clone(),
            blocks: blocks.map(<[usize]>::to_vec),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            output_paths: outputs.iter().map(|p| p.display().to_string()).collect(),
            rng_algorithm: blockpotts::rng::RNG_ALGORITHM.to_string(),
            settings,
        }
    }
}

/// `dir/name.csv` → `dir/name.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    output.with_file_name(format!("{stem}.manifest.json"))
}
