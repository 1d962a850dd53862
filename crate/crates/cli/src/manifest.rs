use std::ffi::OsString;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliResult;

pub const MANIFEST_SCHEMA: &str = "sae-manifest v1";

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub schema: &'static str,
    pub command: &'static str,
    pub argv: Vec<String>,
    pub config: C,
    pub seed: u64,
    pub versions: serde_json::Value,
    pub threads: usize,
    pub timings: serde_json::Value,
    pub inputs: Vec<InputDigest>,
}

pub fn digest(path: &Path) -> CliResult<InputDigest> {
    let bytes = std::fs::read(path)?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

pub fn versions() -> serde_json::Value {
    serde_json::json!({
        "sae": env!("CARGO_PKG_VERSION"),
        "sae_core": sae_core::VERSION,
    })
}

pub fn argv_strings(argv: &[OsString]) -> Vec<String> {
    argv.iter().map(|a| a.to_string_lossy().into_owned()).collect()
}

/// `SAE_SEED` beats `--seed`.
pub fn resolve_seed(flag: u64) -> CliResult<u64> {
    match std::env::var("SAE_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| crate::CliError::validation(format!("SAE_SEED must be an unsigned integer, got {s:?}"))),
        Err(_) => Ok(flag),
    }
}

pub fn timings(elapsed: Duration) -> serde_json::Value {
    serde_json::json!({ "elapsed_secs": elapsed.as_secs_f64() })
}

pub fn write<C: Serialize>(dir: &Path, manifest: &RunManifest<C>) -> CliResult<()> {
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}
