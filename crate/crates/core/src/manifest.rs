//! Run manifests: enough of a snapshot (config, input hash, output
//! hashes) to re-run an experiment and verify bit-identical results.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Hash of a sweep CSV with the wall_seconds column blanked, so re-runs
/// of the same grid compare equal despite timing jitter.
pub fn sweep_csv_hash(csv_text: &str) -> String {
    let masked: Vec<String> = csv_text
        .lines()
        .map(|line| {
            let mut cells: Vec<&str> = line.split(',').collect();
            if let Some(last) = cells.last_mut() {
                if *last != "wall_seconds" {
                    *last = "";
                }
            }
            cells.join(",")
        })
        .collect();
    sha256_hex(masked.join("\n").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: PathBuf,
    pub sha256: String,
    /// True when the hash masks a timing column (sweep CSVs).
    pub timing_masked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub command: String,
    pub method: String,
    /// Effective config as TOML; re-running from this text reproduces
    /// every non-masked output hash.
    pub config_text: String,
    pub input_sha256: Option<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<OutputEntry>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, method: &str, config: &RunConfig) -> Result<Self> {
        Ok(RunManifest {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            method: method.to_string(),
            config_text: config.to_toml()?,
            input_sha256: None,
            started_unix: now_unix(),
            finished_unix: 0,
            outputs: Vec::new(),
        })
    }

    pub fn record_input(&mut self, bytes: &[u8]) {
        self.input_sha256 = Some(sha256_hex(bytes));
    }

    pub fn record_output(&mut self, path: &Path, bytes: &[u8]) {
        self.outputs.push(OutputEntry {
            path: path.to_path_buf(),
            sha256: sha256_hex(bytes),
            timing_masked: false,
        });
    }

    pub fn record_sweep_output(&mut self, path: &Path, csv_text: &str) {
        self.outputs.push(OutputEntry {
            path: path.to_path_buf(),
            sha256: sweep_csv_hash(csv_text),
            timing_masked: true,
        });
    }

    pub fn finish(&mut self) {
        self.finished_unix = now_unix();
    }

    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::from_toml(&self.config_text)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("manifest: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        // FIPS 180-2 test vector for "abc"
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn sweep_hash_ignores_wall_seconds() {
        let a = "fraction_or_sigma,seed_count,macro_f1_mean,macro_f1_std,wall_seconds\n0.1,5,0.9,0.01,1.23\n";
        let b = "fraction_or_sigma,seed_count,macro_f1_mean,macro_f1_std,wall_seconds\n0.1,5,0.9,0.01,9.87\n";
        let c = "fraction_or_sigma,seed_count,macro_f1_mean,macro_f1_std,wall_seconds\n0.2,5,0.9,0.01,1.23\n";
        assert_eq!(sweep_csv_hash(a), sweep_csv_hash(b));
        assert_ne!(sweep_csv_hash(a), sweep_csv_hash(c));
    }

    #[test]
    fn manifest_json_round_trip() {
        let config = RunConfig::default();
        let mut m = RunManifest::start("train", "EG-ConMix", &config).unwrap();
        m.record_input(b"data");
        m.record_output(Path::new("out/checkpoint.bin"), b"bytes");
        m.finish();
        let back = RunManifest::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        assert_eq!(back.config().unwrap(), config);
    }
}
