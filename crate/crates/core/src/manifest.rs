//! Run manifests: a content hash over everything that determines the output
//! bytes (tool version, configuration, input digests, seed), plus audit
//! timestamps that deliberately stay outside the hash.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub input_digests: BTreeMap<String, String>,
    pub seed: u64,
    pub created_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn digest_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

impl RunManifest {
    pub fn new(config_json: &str, inputs: &[(&str, &Path)], seed: u64) -> Result<Self> {
        let mut input_digests = BTreeMap::new();
        for (name, path) in inputs {
            input_digests.insert(name.to_string(), digest_file(path)?);
        }
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: sha256_hex(config_json.as_bytes()),
            input_digests,
            seed,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        })
    }

    /// Deterministic identity of the run; excludes timestamps so reruns with
    /// identical inputs produce byte-identical outputs.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.tool_version.as_bytes());
        h.update(b"\0");
        h.update(self.config_hash.as_bytes());
        h.update(b"\0");
        for (name, digest) in &self.input_digests {
            h.update(name.as_bytes());
            h.update(b"=");
            h.update(digest.as_bytes());
            h.update(b"\0");
        }
        h.update(self.seed.to_le_bytes());
        hex::encode(h.finalize())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes"))?;
        Ok(())
    }
}
