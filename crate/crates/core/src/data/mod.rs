//! Datasets, dataset file formats and checkpoints.

mod checkpoint;
mod cifar;
mod mnist;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use cifar::{load_cifar10, load_cifar10_dir, parse_cifar10, CIFAR_RECORD_LEN};
pub use mnist::{load_mnist, load_mnist_dir, parse_idx_images, parse_idx_labels};

pub const NUM_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images as `N x C x H x W` plus one class index per image.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<u8>,
    split: Split,
    normalized: bool,
}

impl Dataset {
    /// `images` holds raw byte values (0–255) unless `normalized` is set.
    pub fn new(images: Tensor, labels: Vec<u8>, split: Split, normalized: bool) -> Result<Self> {
        if images.ndim() != 4 {
            return Err(Error::dim(format!(
                "images must be N x C x H x W, got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::dim(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Domain(format!("label {} at index {i} is not a class", labels[i])));
        }
        Ok(Self {
            images,
            labels,
            split,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Per-image shape `[C, H, W]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.images.len() / self.len();
        &self.images.data()[i * len..(i + 1) * len]
    }

    /// Gathers the listed samples into a batch tensor and label vector.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let len = self.images.len() / self.len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        let x = Tensor::new(shape, data).expect("gathered batch matches its shape");
        (x, indices.iter().map(|&i| self.labels[i] as usize).collect())
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn take(&self, n: usize) -> Dataset {
        if n >= self.len() || n == 0 {
            return self.clone();
        }
        let len = self.images.len() / self.len();
        let mut shape = self.images.shape().to_vec();
        shape[0] = n;
        Dataset {
            images: Tensor::new(shape, self.images.data()[..n * len].to_vec())
                .expect("prefix matches its shape"),
            labels: self.labels[..n].to_vec(),
            split: self.split,
            normalized: self.normalized,
        }
    }
}

/// Maps raw pixels onto `[-1, 1]` via `x / 127.5 - 1`, evaluated as
/// `(x - 127.5) / 127.5` so that bytes `127 - k` and `128 + k` land on
/// exact negatives.
pub fn normalize(ds: Dataset) -> Result<Dataset> {
    if ds.normalized {
        return Err(Error::State("dataset is already normalized".into()));
    }
    let Dataset {
        mut images,
        labels,
        split,
        ..
    } = ds;
    images.map_inplace(normalize_pixel);
    Ok(Dataset {
        images,
        labels,
        split,
        normalized: true,
    })
}

#[inline]
pub fn normalize_pixel(x: f32) -> f32 {
    (x - 127.5) / 127.5
}

/// Big-endian `u32` at `offset`, or a format error naming the offset.
pub(crate) fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::format(
                bytes.len() as u64,
                format!("file ends before the {what} field at byte {offset}"),
            )
        })
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}
