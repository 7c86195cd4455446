//! Run manifests: one JSON sidecar per run, recording everything needed to
//! reproduce the output byte for byte.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use cmdkit::decomposition::StageTimings;
use cmdkit::error::Result;

#[derive(Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command_line: Vec<String>,
    /// SHA-256 of the canonical JSON of the run configuration; identical
    /// configurations hash identically.
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage_timings_ms: Option<StageTimings>,
    pub total_ms: f64,
}

impl RunManifest {
    pub fn new(seed: u64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command_line: std::env::args().collect(),
            config_hash: String::new(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            stage_timings_ms: None,
            total_ms: 0.0,
        }
    }

    pub fn with_config_payload(mut self, payload: &impl Serialize) -> Self {
        let canonical = serde_json::to_string(payload).unwrap_or_default();
        let digest = Sha256::digest(canonical.as_bytes());
        self.config_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        self
    }

    pub fn with_inputs<P: AsRef<Path>>(mut self, inputs: &[P]) -> Self {
        self.inputs = inputs.iter().map(|p| p.as_ref().display().to_string()).collect();
        self
    }

    pub fn with_outputs<P: AsRef<Path>>(mut self, outputs: &[P]) -> Self {
        self.outputs = outputs.iter().map(|p| p.as_ref().display().to_string()).collect();
        self
    }

    pub fn with_stage_timings(mut self, timings: StageTimings) -> Self {
        self.stage_timings_ms = Some(timings);
        self
    }

    pub fn with_total_ms(mut self, ms: f64) -> Self {
        self.total_ms = ms;
        self
    }

    /// Write `<output>.manifest.json` next to the primary output.
    pub fn write_for(&self, primary_output: &Path) -> Result<()> {
        let mut name = primary_output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        name.push_str(".manifest.json");
        let path = primary_output.with_file_name(name);
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
