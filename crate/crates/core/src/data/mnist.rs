//! MNIST in the IDX format: big-endian headers, one unsigned byte per pixel.

use std::path::Path;

use super::{read_be_u32, read_file, Dataset, Split, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: [u8; 4] = [0, 0, 8, 3];
const LABEL_MAGIC: [u8; 4] = [0, 0, 8, 1];
const SIDE: usize = 28;

fn check_magic(bytes: &[u8], want: [u8; 4], what: &str) -> Result<()> {
    for (i, &w) in want.iter().enumerate() {
        match bytes.get(i) {
            None => {
                return Err(Error::format(
                    bytes.len() as u64,
                    format!("file ends inside the {what} magic number"),
                ))
            }
            Some(&b) if b != w => {
                return Err(Error::format(
                    i as u64,
                    format!(
                        "bad {what} magic: expected {:02x}{:02x}{:02x}{:02x}",
                        want[0], want[1], want[2], want[3]
                    ),
                ))
            }
            _ => {}
        }
    }
    Ok(())
}

fn check_length(bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated: header promises {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            expected as u64,
            format!("{} unexpected trailing bytes", bytes.len() - expected),
        ));
    }
    Ok(())
}

/// Parses an IDX image file into `N x 1 x 28 x 28` raw pixel values.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    check_magic(bytes, IMAGE_MAGIC, "image")?;
    let count = read_be_u32(bytes, 4, "image count")? as usize;
    for (offset, name) in [(8, "row"), (12, "column")] {
        let v = read_be_u32(bytes, offset, name)? as usize;
        if v != SIDE {
            return Err(Error::format(
                offset as u64,
                format!("{name} count is {v}, expected {SIDE}"),
            ));
        }
    }
    if count == 0 {
        return Err(Error::format(4, "image file holds no images"));
    }
    check_length(bytes, 16 + count * SIDE * SIDE)?;
    let data = bytes[16..].iter().map(|&b| b as f32).collect();
    Tensor::new(vec![count, 1, SIDE, SIDE], data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC, "label")?;
    let count = read_be_u32(bytes, 4, "label count")? as usize;
    if count == 0 {
        return Err(Error::format(4, "label file holds no labels"));
    }
    check_length(bytes, 8 + count)?;
    let labels = &bytes[8..];
    if let Some(i) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
        return Err(Error::format(
            (8 + i) as u64,
            format!("label {} is not a digit", labels[i]),
        ));
    }
    Ok(labels.to_vec())
}

/// Loads an image/label file pair. Pixels are left as raw byte values.
pub fn load_mnist(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let images = parse_idx_images(&read_file(images_path)?)?;
    let labels = parse_idx_labels(&read_file(labels_path)?)?;
    if images.shape()[0] != labels.len() {
        return Err(Error::format(
            4,
            format!(
                "label file counts {} items, image file {}",
                labels.len(),
                images.shape()[0]
            ),
        ));
    }
    Dataset::new(images, labels, split, false)
}

/// Loads a split from a directory holding the four files under their
/// standard names (`train-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`, ...).
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_mnist(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}
