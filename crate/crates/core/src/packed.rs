//! Row-major bit-packed sign matrices: bit `1` encodes `+1`, bit `0` encodes
//! `-1`. Column `c` of a row lives in word `c / 64`, bit `c % 64`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedBinaryMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl PackedBinaryMatrix {
    /// Packs a `rows x cols` matrix of exact `±1` entries.
    pub fn pack(signs: &Tensor, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || signs.len() != rows * cols {
            return Err(Error::dim(format!(
                "cannot pack {} values as a {rows}x{cols} matrix",
                signs.len()
            )));
        }
        let words_per_row = cols.div_ceil(64);
        let mut words = vec![0u64; rows * words_per_row];
        for (r, row) in signs.data().chunks_exact(cols).enumerate() {
            let dst = &mut words[r * words_per_row..(r + 1) * words_per_row];
            for (c, &v) in row.iter().enumerate() {
                if v == 1.0 {
                    dst[c / 64] |= 1u64 << (c % 64);
                } else if v != -1.0 {
                    return Err(Error::Domain(format!(
                        "entry ({r}, {c}) is {v}; only ±1 can be packed"
                    )));
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            words_per_row,
            words,
        })
    }

    /// Packs the deterministic binarization of real weights without
    /// materialising the sign tensor.
    pub fn pack_signs_of(w: &[f32], rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || w.len() != rows * cols {
            return Err(Error::dim(format!(
                "cannot pack {} values as a {rows}x{cols} matrix",
                w.len()
            )));
        }
        let words_per_row = cols.div_ceil(64);
        let mut words = vec![0u64; rows * words_per_row];
        for (r, row) in w.chunks_exact(cols).enumerate() {
            let dst = &mut words[r * words_per_row..(r + 1) * words_per_row];
            for (c, &v) in row.iter().enumerate() {
                if v > 0.0 {
                    dst[c / 64] |= 1u64 << (c % 64);
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            words_per_row,
            words,
        })
    }

    pub fn unpack(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.rows, self.cols]);
        for (r, row) in out.data_mut().chunks_exact_mut(self.cols).enumerate() {
            let src = self.row_words(r);
            for (c, v) in row.iter_mut().enumerate() {
                *v = if src[c / 64] >> (c % 64) & 1 == 1 {
                    1.0
                } else {
                    -1.0
                };
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn row_words(&self, r: usize) -> &[u64] {
        &self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    /// Number of `+1` entries in row `r`.
    pub fn row_popcount(&self, r: usize) -> u32 {
        self.row_words(r).iter().map(|w| w.count_ones()).sum()
    }

    /// True when every bit past column `cols` in each row's last word is clear.
    pub fn padding_is_clear(&self) -> bool {
        let tail = self.cols % 64;
        if tail == 0 {
            return true;
        }
        let mask = !((1u64 << tail) - 1);
        (0..self.rows).all(|r| self.row_words(r)[self.words_per_row - 1] & mask == 0)
    }
}
