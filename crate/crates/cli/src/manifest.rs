//! Run manifests: the resolved configuration, a hash of it, and timing.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub started_utc: String,
    pub wall_seconds: f64,
    pub outputs: Vec<String>,
    #[serde(skip)]
    started: Option<Instant>,
}

impl Manifest {
    /// Capture the fully resolved configuration of a command.
    pub fn start<T: Serialize>(command: &str, config: &T) -> anyhow::Result<Self> {
        let config = serde_json::to_value(config)?;
        let canonical = serde_json::to_string(&config)?;
        let digest = Sha256::digest(format!("{command}:{canonical}").as_bytes());
        let mut hash = String::with_capacity(12);
        for b in digest.iter().take(6) {
            hash.push_str(&format!("{b:02x}"));
        }
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            config_hash: hash,
            started_utc: chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            wall_seconds: 0.0,
            outputs: Vec::new(),
            started: Some(Instant::now()),
        })
    }

    pub fn outputs(&mut self, names: &[&str]) {
        self.outputs = names.iter().map(|s| s.to_string()).collect();
    }

    /// Write `manifest.json` into the run directory.
    pub fn finish(&mut self, dir: &Path) -> anyhow::Result<()> {
        if let Some(t) = self.started {
            self.wall_seconds = t.elapsed().as_secs_f64();
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}
