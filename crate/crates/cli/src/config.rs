//! Config-file loading and output metadata.
//!
//! A TOML file supplies section defaults; command-line flags override
//! individual fields. Every artifact written by a subcommand carries a
//! metadata object with the tool version, a hash of the effective config,
//! and the seed, so identical invocations produce identical files.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use speechworthy::align::{AlignConfig, SftConfig};
use speechworthy::judge::EndpointConfig;
use speechworthy::prefdata::FilterConfig;
use std::path::Path;

/// File schema: all sections optional, flags win over file values.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub align: Option<AlignConfig>,
    #[serde(default)]
    pub warmup: Option<SftConfig>,
    #[serde(default)]
    pub filter: Option<FilterConfig>,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
}

/// Seed plus file-level section defaults shared by all subcommands.
pub struct RunContext {
    pub seed: u64,
    pub file: FileConfig,
}

impl RunContext {
    pub fn load(seed_flag: u64, path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => FileConfig::default(),
        };
        // The flag wins unless left at its default while the file sets one.
        let seed = if seed_flag != 0 { seed_flag } else { file.seed.unwrap_or(0) };
        Ok(Self { seed, file })
    }

    /// Metadata object embedded in every output artifact.
    pub fn meta<C: Serialize>(&self, effective_config: &C) -> serde_json::Value {
        let canonical = serde_json::to_string(effective_config).expect("serializable config");
        let digest = Sha256::digest(canonical.as_bytes());
        serde_json::json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "config_hash": hex::encode(&digest[..6]),
            "seed": self.seed,
        })
    }
}

/// Exit-code-bearing failure: 1 = validation, 2 = runtime/endpoint.
pub struct CliFailure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub fn validation<E: Into<anyhow::Error>>(e: E) -> CliFailure {
    CliFailure { code: 1, error: e.into() }
}

pub fn runtime<E: Into<anyhow::Error>>(e: E) -> CliFailure {
    CliFailure { code: 2, error: e.into() }
}
