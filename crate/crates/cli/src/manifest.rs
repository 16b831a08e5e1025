use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of `config` serialized as compact JSON.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

/// `out/` -> `out/run.json`, `vol.raw` -> `vol.run.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("run.json")
    } else {
        output.with_extension("run.json")
    }
}

pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Run {
    command: &'static str,
    started: Instant,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl Run {
    pub fn start(command: &'static str) -> Self {
        Run { command, started: Instant::now(), inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    /// Writes the manifest beside `anchor` and returns its path.
    pub fn finish<C: Serialize>(self, anchor: &Path, config: &C, seed: Option<u64>) -> Result<PathBuf> {
        let config = serde_json::to_value(config)?;
        let m = RunManifest {
            command: self.command.to_string(),
            config_hash: config_hash(&config),
            config,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let path = manifest_path(anchor);
        freqct::geometry::io::write_json(&path, &m)?;
        Ok(path)
    }
}
