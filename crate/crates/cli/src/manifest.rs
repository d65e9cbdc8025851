//! Run manifests: one JSON record per command invocation, kept as an
//! array next to the CSV it wrote to.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::datasets::FileDigest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub datasets: Vec<FileDigest>,
    pub started: String,
    pub finished: String,
    pub engine_version: String,
    /// `ok`, `diverged` or `failed`.
    pub status: String,
    /// 1-based inclusive range of CSV data rows this run wrote, if any.
    pub rows: Option<[usize; 2]>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn engine_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

pub fn read_manifests(path: &Path) -> Result<Vec<RunManifest>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Appends `m` to the array in `path`. Earlier runs lose any rows beyond
/// `kept_rows`, which the new run has rewritten.
pub fn append_manifest(path: &Path, m: RunManifest, kept_rows: usize) -> Result<()> {
    let mut all = read_manifests(path)?;
    for old in &mut all {
        old.rows = match old.rows {
            Some([first, _]) if first > kept_rows => None,
            Some([first, last]) => Some([first, last.min(kept_rows)]),
            None => None,
        };
    }
    all.push(m);
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_string_pretty(&all)? + "\n")
        .with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}
