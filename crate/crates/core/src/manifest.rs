//! Run manifests: resolved configuration, input digests and stage timings.
//!
//! The manifest digest covers everything except timings, so identical inputs
//! and settings give an identical digest. Output files carry it on their first
//! line as `# manifest_sha256=<hex>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{QipfError, Result};

pub const DIGEST_PREFIX: &str = "# manifest_sha256=";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    /// Wall-clock milliseconds per stage; excluded from the digest.
    #[serde(default)]
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: &impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config)
            .map_err(|e| QipfError::invalid(format!("unserializable configuration: {e}")))?;
        Ok(Self {
            tool: "qipf".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            inputs: Vec::new(),
            timings_ms: BTreeMap::new(),
        })
    }

    pub fn add_input_bytes(&mut self, role: impl Into<String>, path: impl Into<String>, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            role: role.into(),
            path: path.into(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn add_input(&mut self, role: impl Into<String>, path: impl AsRef<Path>) -> Result<()> {
        let bytes = fs::read(path.as_ref())?;
        self.add_input_bytes(role, path.as_ref().display().to_string(), &bytes);
        Ok(())
    }

    pub fn record_timing(&mut self, stage: impl Into<String>, elapsed: Duration) {
        *self.timings_ms.entry(stage.into()).or_default() += elapsed.as_secs_f64() * 1e3;
    }

    /// SHA-256 over the canonical JSON of everything but the timings.
    pub fn digest(&self) -> String {
        let mut stable = self.clone();
        stable.timings_ms.clear();
        let json = serde_json::to_vec(&stable).expect("manifest serializes");
        sha256_hex(&json)
    }

    pub fn header_line(&self) -> String {
        format!("{DIGEST_PREFIX}{}", self.digest())
    }

    /// Checks every recorded input against its file on disk.
    pub fn verify_inputs(&self) -> Result<()> {
        for input in &self.inputs {
            let actual = sha256_hex(&fs::read(&input.path)?);
            if actual != input.sha256 {
                return Err(QipfError::invalid(format!(
                    "{} input `{}` changed since the manifest was written",
                    input.role, input.path
                )));
            }
        }
        Ok(())
    }

    pub fn input(&self, role: &str) -> Option<&InputDigest> {
        self.inputs.iter().find(|i| i.role == role)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| QipfError::Parse {
            location: format!("manifest {}", path.as_ref().display()),
            message: e.to_string(),
        })
    }
}

/// Digest named on the first line of an output file, if any.
pub fn digest_from_output(text: &str) -> Option<&str> {
    text.lines().next()?.strip_prefix(DIGEST_PREFIX)
}

/// Sibling path for the manifest of `output`: `<output>.manifest.json`.
pub fn manifest_path_for(output: &Path) -> std::path::PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    name.into()
}
