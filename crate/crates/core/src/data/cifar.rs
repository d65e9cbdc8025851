//! CIFAR-10 binary batches: 3073-byte records, a label byte followed by the
//! red, green and blue 32x32 planes.

use std::path::{Path, PathBuf};

use super::{read_file, Dataset, Split, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;

/// Decodes one batch file into raw `N x 3 x 32 x 32` pixels and labels.
pub fn parse_cifar10(bytes: &[u8]) -> Result<(Vec<f32>, Vec<u8>)> {
    if bytes.is_empty() {
        return Err(Error::format(0, "empty CIFAR-10 batch"));
    }
    let partial = bytes.len() % CIFAR_RECORD_LEN;
    if partial != 0 {
        return Err(Error::format(
            (bytes.len() - partial) as u64,
            format!(
                "length {} is not a multiple of the {CIFAR_RECORD_LEN}-byte record",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_LEN - 1));
    let mut labels = Vec::with_capacity(n);
    for (r, record) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        if record[0] as usize >= NUM_CLASSES {
            return Err(Error::format(
                (r * CIFAR_RECORD_LEN) as u64,
                format!("label {} is not a class", record[0]),
            ));
        }
        labels.push(record[0]);
        pixels.extend(record[1..].iter().map(|&b| b as f32));
    }
    Ok((pixels, labels))
}

/// Concatenates the given batch files in order.
pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P], split: Split) -> Result<Dataset> {
    if batch_paths.is_empty() {
        return Err(Error::Domain("no CIFAR-10 batch files given".into()));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let (p, l) = parse_cifar10(&read_file(path.as_ref())?)?;
        pixels.extend(p);
        labels.extend(l);
    }
    let images = Tensor::new(vec![labels.len(), 3, 32, 32], pixels)?;
    Dataset::new(images, labels, split, false)
}

/// `data_batch_1.bin` .. `data_batch_5.bin` or `test_batch.bin` under `dir`.
pub fn load_cifar10_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let paths: Vec<PathBuf> = match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    load_cifar10(&paths, split)
}
