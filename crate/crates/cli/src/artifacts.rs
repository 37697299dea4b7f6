//! Writes CSV data, `summary.json` and `manifest.json` to the output directory.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::runner::Outcome;

/// Hash of `"blob <len>\0" ++ bytes`, the framing git uses for objects.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct FileEntry<'a> {
    name: &'a str,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    recipe: Option<&'a str>,
    config: &'a ExperimentConfig,
    config_hash: String,
    files: Vec<FileEntry<'a>>,
    /// Hash over the names and hashes of all data files.
    content_hash: String,
}

/// Writes every artifact; returns the names written, manifest last.
pub fn write_all(
    dir: &Path,
    cfg: &ExperimentConfig,
    config_text: &str,
    recipe: Option<&str>,
    outcome: &Outcome,
) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(dir)?;
    let mut summary = serde_json::to_string_pretty(&outcome.summary)?;
    summary.push('\n');

    let mut names = Vec::new();
    let mut entries = Vec::new();
    let mut all = Sha256::new();
    let data = outcome
        .files
        .iter()
        .map(|(n, b)| (n.as_str(), b.as_slice()))
        .chain(std::iter::once(("summary.json", summary.as_bytes())));
    for (name, bytes) in data {
        fs::write(dir.join(name), bytes)?;
        let sha = content_hash(bytes);
        all.update(name.as_bytes());
        all.update([0]);
        all.update(sha.as_bytes());
        all.update(b"\n");
        entries.push(FileEntry {
            name,
            bytes: bytes.len(),
            sha256: sha,
        });
        names.push(name.to_string());
    }
    let manifest = Manifest {
        tool: "carnot",
        version: env!("CARGO_PKG_VERSION"),
        core_version: carnot_core::VERSION,
        recipe,
        config: cfg,
        config_hash: content_hash(config_text.as_bytes()),
        files: entries,
        content_hash: hex(&all.finalize()),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    names.push("manifest.json".to_string());
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_git_blob_framing() {
        // printf 'blob 0\0' | sha256sum
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
