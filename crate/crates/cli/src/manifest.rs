use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one command run: enough to repeat it and check the result.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Effective decoding configuration as TOML, when the command decodes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameters: Option<serde_json::Value>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn digest(path: &Path) -> CliResult<FileDigest> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

pub struct ManifestBuilder {
    command: String,
    started: u64,
    seed: Option<u64>,
    config: Option<String>,
    parameters: Option<serde_json::Value>,
    inputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: now_unix(),
            seed: None,
            config: None,
            parameters: None,
            inputs: Vec::new(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn config(mut self, toml: String) -> Self {
        self.config = Some(toml);
        self
    }

    pub fn parameters(mut self, value: serde_json::Value) -> Self {
        self.parameters = Some(value);
        self
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn inputs<'a>(mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Self {
        self.inputs.extend(paths.into_iter().cloned());
        self
    }

    /// Hashes inputs and `outputs`, then writes the manifest to `dest`.
    pub fn write(self, outputs: &[&Path], dest: &Path) -> CliResult<()> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            args: std::env::args().skip(1).collect(),
            seed: self.seed,
            config: self.config,
            parameters: self.parameters,
            inputs: self
                .inputs
                .iter()
                .map(|p| digest(p))
                .collect::<CliResult<_>>()?,
            outputs: outputs
                .iter()
                .map(|p| digest(p))
                .collect::<CliResult<_>>()?,
            started_unix: self.started,
            finished_unix: now_unix(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Data(format!("manifest: {e}")))?;
        text.push('\n');
        fs::write(dest, text).map_err(|e| CliError::io(dest, e))
    }
}
