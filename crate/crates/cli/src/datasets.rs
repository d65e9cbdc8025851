//! Dataset loading with file checksums for the run manifest.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use binnet::data::{load_cifar10, load_mnist, normalize};
use binnet::{Dataset, Preset, Split};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: format!("{:x}", Sha256::digest(&bytes)),
    })
}

/// The files making up one split, under their standard names.
pub fn split_files(dataset: Preset, dir: &Path, split: Split) -> Vec<PathBuf> {
    match (dataset, split) {
        (Preset::Mnist, _) => {
            let prefix = if split == Split::Train { "train" } else { "t10k" };
            vec![
                dir.join(format!("{prefix}-images-idx3-ubyte")),
                dir.join(format!("{prefix}-labels-idx1-ubyte")),
            ]
        }
        (Preset::Cifar10, Split::Train) => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        (Preset::Cifar10, Split::Test) => vec![dir.join("test_batch.bin")],
    }
}

/// Loads and normalizes one split, keeping the first `limit` images
/// (all when 0). Appends the digests of the files read to `digests`.
pub fn load_split(
    dataset: Preset,
    dir: &Path,
    split: Split,
    limit: usize,
    digests: &mut Vec<FileDigest>,
) -> Result<Dataset> {
    let files = split_files(dataset, dir, split);
    if let Some(missing) = files.iter().find(|f| !f.is_file()) {
        anyhow::bail!(
            "{} dataset file {} not found (set --data-dir)",
            dataset,
            missing.display()
        );
    }
    let raw = match dataset {
        Preset::Mnist => load_mnist(&files[0], &files[1], split),
        Preset::Cifar10 => load_cifar10(&files, split),
    }
    .with_context(|| format!("loading {dataset} from {}", dir.display()))?;
    for f in &files {
        digests.push(digest_file(f)?);
    }
    Ok(normalize(raw.take(limit))?)
}
