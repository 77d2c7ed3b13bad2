//! Artifact emission. Every JSON and CSV artifact carries the tool version and
//! config hash; the manifest is the only file with a timestamp.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use nalign::nn::LayeredNetwork;
use nalign::{checkpoint, Real, Result};

use crate::config::{hex, ExperimentConfig};

pub const TOOL: &str = "nalign";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Artifacts {
    dir: PathBuf,
    command: &'static str,
    config_hash: String,
    written: Vec<(String, String, u64)>,
}

impl Artifacts {
    pub fn create(dir: &Path, command: &'static str, config: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut out = Artifacts { dir: dir.to_path_buf(), command, config_hash: config.hash(), written: Vec::new() };
        out.json("config.json", config)?;
        Ok(out)
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.written.push((name.to_string(), hex(&Sha256::digest(bytes)), bytes.len() as u64));
        Ok(())
    }

    /// Writes `{tool, version, command, config_hash, report}`.
    pub fn json<T: Serialize>(&mut self, name: &str, report: &T) -> Result<()> {
        let doc = json!({
            "tool": TOOL,
            "version": VERSION,
            "command": self.command,
            "config_hash": self.config_hash,
            "report": report,
        });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Prepends a `#` provenance line to a CSV body.
    pub fn csv(&mut self, name: &str, body: &str) -> Result<()> {
        let text = format!("# {TOOL} {VERSION} config_hash={}\n{body}", self.config_hash);
        self.write(name, text.as_bytes())
    }

    pub fn checkpoint<F: Real>(&mut self, name: &str, net: &LayeredNetwork<F>) -> Result<()> {
        let bytes = checkpoint::to_bytes(net)?;
        self.write(name, &bytes)
    }

    /// Writes `manifest.json` listing every artifact with its SHA-256.
    pub fn finish(self, threads: usize) -> Result<PathBuf> {
        let created = time::OffsetDateTime::now_utc()
            .format(&time::format_description::well_known::Rfc3339)
            .unwrap_or_default();
        let files: Vec<Value> = self
            .written
            .iter()
            .map(|(name, sha, bytes)| json!({"file": name, "sha256": sha, "bytes": bytes}))
            .collect();
        let manifest = json!({
            "tool": TOOL,
            "version": VERSION,
            "command": self.command,
            "config_hash": self.config_hash,
            "threads": threads,
            "created_utc": created,
            "artifacts": files,
        });
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(path)
    }
}
