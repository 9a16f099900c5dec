//! Artifact persistence: every output embeds the config hash and global
//! seed; files are written atomically (temp + rename) so a failing command
//! never clobbers a completed artifact; loads validate the recorded hash
//! against the current configuration.

use crate::CliError;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Serialize)]
pub struct Stamped<T: Serialize> {
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Deserialize)]
struct Envelope {
    config_hash: String,
    #[allow(dead_code)]
    seed: u64,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))?;
    Ok(())
}

/// Write a JSON artifact with the hash/seed stamp.
pub fn write_json<T: Serialize>(
    path: &Path,
    config_hash: &str,
    seed: u64,
    body: T,
) -> Result<(), CliError> {
    let stamped = Stamped {
        config_hash: config_hash.to_string(),
        seed,
        body,
    };
    let text = serde_json::to_string_pretty(&stamped)
        .map_err(|e| CliError::Numerical(format!("serialization failed: {e}")))?;
    write_atomic(path, text.as_bytes())
}

/// Read a JSON artifact, checking existence and the config hash.
pub fn read_json<T: DeserializeOwned>(path: &Path, config_hash: &str) -> Result<T, CliError> {
    let text = read_artifact_text(path)?;
    let env: Envelope = serde_json::from_str(&text)
        .map_err(|e| CliError::Numerical(format!("{}: malformed artifact: {e}", path.display())))?;
    if env.config_hash != config_hash {
        return Err(CliError::MissingArtifact(format!(
            "{} was produced under config hash {} but the current config hashes to {}; \
             regenerate the upstream artifact",
            path.display(),
            env.config_hash,
            config_hash
        )));
    }
    serde_json::from_str(&text)
        .map_err(|e| CliError::Numerical(format!("{}: malformed artifact: {e}", path.display())))
}

pub fn read_artifact_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingArtifact(format!(
                "{} is missing; run the upstream command first",
                path.display()
            ))
        } else {
            CliError::io(path, e)
        }
    })
}

/// Write a CSV artifact with a stamp comment line on top.
pub fn write_csv(path: &Path, config_hash: &str, seed: u64, body: &str) -> Result<(), CliError> {
    let text = format!("# config_hash={config_hash} seed={seed}\n{body}");
    write_atomic(path, text.as_bytes())
}

/// Write an SVG artifact with a stamp comment before the root element.
pub fn write_svg(path: &Path, config_hash: &str, seed: u64, body: &str) -> Result<(), CliError> {
    let text = format!("<!-- config_hash={config_hash} seed={seed} -->\n{body}");
    write_atomic(path, text.as_bytes())
}

/// Existence check that yields the missing-upstream exit code.
pub fn require(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(format!(
            "{} is missing; {hint}",
            path.display()
        )))
    }
}
