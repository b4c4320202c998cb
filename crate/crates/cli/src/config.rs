//! Config loading, presets and the run manifest.

use dqtrack::harness::ExperimentConfig;
use dqtrack::sim::TrajectoryShape;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const ARTIFACT_VERSION: &str = "dqtrack-run-v1";

/// Built-in scenario presets. The closed-loop variants inject GP means;
/// the open-loop variants train the GPs without injecting.
pub fn preset(name: &str) -> Option<(ExperimentConfig, String)> {
    let (shape, compensate) = match name {
        "lemniscate-closedloop" => (TrajectoryShape::Lemniscate, true),
        "lemniscate-openloop" => (TrajectoryShape::Lemniscate, false),
        "circle-closedloop" => (TrajectoryShape::Circle, true),
        "circle-openloop" => (TrajectoryShape::Circle, false),
        "spiral-closedloop" => (TrajectoryShape::Spiral, true),
        "spiral-openloop" => (TrajectoryShape::Spiral, false),
        _ => return None,
    };
    Some((ExperimentConfig::preset(shape, compensate), name.to_string()))
}

pub fn preset_names() -> Vec<&'static str> {
    vec![
        "lemniscate-closedloop",
        "lemniscate-openloop",
        "circle-closedloop",
        "circle-openloop",
        "spiral-closedloop",
        "spiral-openloop",
    ]
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| format!("cannot parse config {}: {e}", path.display()))?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Digest of the parsed config. Serializing the typed struct makes the
/// digest independent of key order or formatting in the source file.
pub fn config_digest(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serialization cannot fail");
    let mut h = Sha256::new();
    h.update(canonical.as_bytes());
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub label: String,
    pub config_digest: String,
    pub compensated: bool,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
}
