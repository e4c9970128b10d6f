//! Run manifests: a JSON record written atomically next to every output,
//! with enough detail (config snapshot, seed, input hashes, code version)
//! to reproduce the run bit-exactly.

use serde::Serialize;
use sha2::{Digest as _, Sha256};
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub code_version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub config: Option<InputRecord>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationRecord>,
    pub wall_time_s: f64,
}

#[derive(Debug, Serialize)]
pub struct NormalizationRecord {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            code_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed: None,
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            normalization: None,
            wall_time_s: 0.0,
        }
    }

    pub fn record_config(&mut self, path: &Path) -> Result<(), CliError> {
        self.config = Some(hash_file(path)?);
        Ok(())
    }

    pub fn record_input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(hash_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes `<output>.manifest.json` atomically (temp file + rename).
    pub fn write_next_to(&self, output: &Path) -> Result<(), CliError> {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        let path: PathBuf = output.with_file_name(name);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Data(format!("manifest serialization failed: {e}")))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, &path)
            .map_err(|e| CliError::Data(format!("cannot rename manifest: {e}")))?;
        Ok(())
    }
}

fn hash_file(path: &Path) -> Result<InputRecord, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(InputRecord {
        path: path.display().to_string(),
        sha256: format!("{:x}", hasher.finalize()),
    })
}
