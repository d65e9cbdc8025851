//! Dense layers with bit-packed `±1` weights.
//!
//! A row of `±1` weights dotted with `a` equals `2·Σ_{bit set} a_i − Σ a_i`,
//! so the kernel only needs the masked sums. Columns are split into groups
//! of four; for each group the 16 possible subset sums of its four
//! activations go into a small table, and a row's masked sum is the sum over
//! groups of the table entry selected by that row's 4-bit weight pattern.

use crate::error::{Error, Result};
use crate::packed::PackedBinaryMatrix;
use crate::tensor::{lane_sum, Tensor};

/// Output rows per vector register.
pub(crate) const BLOCK: usize = 16;
/// Output rows handled together by one sweep over the tables.
const BAND: usize = 8 * BLOCK;

/// First row and row count of band `i` when rows are padded to `padded`.
fn band(i: usize, padded: usize) -> (usize, usize) {
    let start = i * BAND;
    (start, BAND.min(padded - start))
}

#[derive(Clone, Debug)]
pub struct PackedDense {
    wb_packed: PackedBinaryMatrix,
    b: Vec<f32>,
    row_popcounts: Vec<u32>,
    groups: usize,
    /// Weight nibbles laid out `[row band][group][row in band]`; rows past
    /// `out_features` are zero.
    nibbles: Vec<u8>,
}

impl PackedDense {
    pub fn new(wb_packed: PackedBinaryMatrix, b: Vec<f32>) -> Result<Self> {
        let rows = wb_packed.rows();
        if b.len() != rows {
            return Err(Error::dim(format!(
                "bias has {} entries for {rows} output rows",
                b.len()
            )));
        }
        let groups = wb_packed.cols().div_ceil(4);
        let padded = rows.div_ceil(BLOCK) * BLOCK;
        let mut nibbles = vec![0u8; padded * groups];
        for r in 0..rows {
            let words = wb_packed.row_words(r);
            let (start, width) = band(r / BAND, padded);
            let base = start * groups + r - start;
            for g in 0..groups {
                nibbles[base + g * width] = (words[g / 16] >> (4 * (g % 16)) & 0xF) as u8;
            }
        }
        let row_popcounts = (0..rows).map(|r| wb_packed.row_popcount(r)).collect();
        Ok(Self {
            wb_packed,
            b,
            row_popcounts,
            groups,
            nibbles,
        })
    }

    /// Packs the deterministic binarization (`w <= 0` to `-1`) of real
    /// `out x in` weights.
    pub fn from_signs_of(w: &Tensor, b: &Tensor) -> Result<Self> {
        let (rows, cols) = w.dims2()?;
        Self::new(
            PackedBinaryMatrix::pack_signs_of(w.data(), rows, cols)?,
            b.data().to_vec(),
        )
    }

    pub fn in_features(&self) -> usize {
        self.wb_packed.cols()
    }

    pub fn out_features(&self) -> usize {
        self.wb_packed.rows()
    }

    pub fn packed(&self) -> &PackedBinaryMatrix {
        &self.wb_packed
    }

    pub fn bias(&self) -> &[f32] {
        &self.b
    }

    /// Number of `+1` weights in each output row.
    pub fn row_popcounts(&self) -> &[u32] {
        &self.row_popcounts
    }

    fn blocks(&self) -> usize {
        self.out_features().div_ceil(BLOCK)
    }

    pub(crate) fn scratch(&self) -> Scratch {
        Scratch {
            tables: vec![0.0; self.groups * 16],
            masked: vec![0.0; self.blocks() * BLOCK],
        }
    }

    /// One activation row through the layer; `out` receives `out_features`
    /// values.
    pub(crate) fn forward_row(&self, a: &[f32], scratch: &mut Scratch, out: &mut [f32]) {
        debug_assert_eq!(a.len(), self.in_features());
        build_tables(a, &mut scratch.tables);
        masked_sums(&self.nibbles, &scratch.tables, self.groups, &mut scratch.masked);
        let total = lane_sum(a);
        for ((o, &m), &b) in out.iter_mut().zip(&scratch.masked).zip(&self.b) {
            *o = 2.0f32.mul_add(m, -total) + b;
        }
    }
}

pub(crate) struct Scratch {
    tables: Vec<f32>,
    masked: Vec<f32>,
}

/// `out = a · wbᵀ + b` for `a` of shape `batch x in`.
pub fn binary_dense_forward(layer: &PackedDense, a: &Tensor) -> Result<Tensor> {
    let (batch, width) = a.dims2()?;
    if width != layer.in_features() {
        return Err(Error::dim(format!(
            "packed layer expects {} inputs, got {width}",
            layer.in_features()
        )));
    }
    let outs = layer.out_features();
    let mut out = Tensor::zeros(&[batch, outs]);
    let mut scratch = layer.scratch();
    for (row, dst) in a.data().chunks_exact(width).zip(out.data_mut().chunks_exact_mut(outs)) {
        layer.forward_row(row, &mut scratch, dst);
    }
    Ok(out)
}

/// Bit `k` of a table index selects activation `k` of the group.
pub(crate) const SELECT: [[f32; 16]; 4] = {
    let mut s = [[0.0f32; 16]; 4];
    let mut k = 0;
    while k < 4 {
        let mut m = 0;
        while m < 16 {
            s[k][m] = ((m >> k) & 1) as f32;
            m += 1;
        }
        k += 1;
    }
    s
};

/// `tables[16·g + m] = Σ_{k: bit k of m} a[4g + k]`, with `a` zero-padded
/// to a multiple of four.
fn build_tables(a: &[f32], tables: &mut [f32]) {
    let mut chunks = a.chunks_exact(4);
    let mut dst = tables.chunks_exact_mut(16);
    for (x, t) in (&mut chunks).zip(&mut dst) {
        fill_table([x[0], x[1], x[2], x[3]], t);
    }
    let rest = chunks.remainder();
    if !rest.is_empty() {
        let mut x = [0.0f32; 4];
        x[..rest.len()].copy_from_slice(rest);
        fill_table(x, dst.next().expect("table per group"));
    }
}

#[inline(always)]
fn fill_table(x: [f32; 4], t: &mut [f32]) {
    for m in 0..16 {
        t[m] = x[0] * SELECT[0][m] + x[1] * SELECT[1][m] + x[2] * SELECT[2][m] + x[3] * SELECT[3][m];
    }
}

/// `masked[o] = Σ_g tables[g][nibble(o, g)]`, summed over groups in order.
fn masked_sums(nibbles: &[u8], tables: &[f32], groups: usize, masked: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the feature check above guarantees AVX-512F, and the slice
        // lengths are those produced by `PackedDense::scratch`.
        unsafe { avx512::masked_sums(nibbles, tables, groups, masked) };
        return;
    }
    masked_sums_portable(nibbles, tables, groups, masked);
}

pub(crate) fn masked_sums_portable(nibbles: &[u8], tables: &[f32], groups: usize, masked: &mut [f32]) {
    let padded = masked.len();
    for b in 0..padded.div_ceil(BAND) {
        let (start, width) = band(b, padded);
        let acc = &mut masked[start..start + width];
        acc.fill(0.0);
        let nib = &nibbles[start * groups..(start + width) * groups];
        for (n, t) in nib.chunks_exact(width).zip(tables.chunks_exact(16)) {
            for (a, &i) in acc.iter_mut().zip(n) {
                *a += t[i as usize];
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    use super::{band, BAND, BLOCK};

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn masked_sums(nibbles: &[u8], tables: &[f32], groups: usize, masked: &mut [f32]) {
        let padded = masked.len();
        assert!(nibbles.len() >= padded * groups && tables.len() >= groups * 16);
        for b in 0..padded.div_ceil(BAND) {
            let (start, width) = band(b, padded);
            match width / BLOCK {
                8 => sweep::<8>(nibbles, tables, groups, start, masked),
                7 => sweep::<7>(nibbles, tables, groups, start, masked),
                6 => sweep::<6>(nibbles, tables, groups, start, masked),
                5 => sweep::<5>(nibbles, tables, groups, start, masked),
                4 => sweep::<4>(nibbles, tables, groups, start, masked),
                3 => sweep::<3>(nibbles, tables, groups, start, masked),
                2 => sweep::<2>(nibbles, tables, groups, start, masked),
                _ => sweep::<1>(nibbles, tables, groups, start, masked),
            }
        }
    }

    /// One band of `R` register-wide row blocks.
    #[target_feature(enable = "avx512f")]
    unsafe fn sweep<const R: usize>(
        nibbles: &[u8],
        tables: &[f32],
        groups: usize,
        start: usize,
        masked: &mut [f32],
    ) {
        let width = R * BLOCK;
        let mut nib = nibbles.as_ptr().add(start * groups);
        let tab = tables.as_ptr();
        let mut acc = [_mm512_setzero_ps(); R];
        for g in 0..groups {
            let t = _mm512_loadu_ps(tab.add(g * 16));
            for (r, a) in acc.iter_mut().enumerate() {
                let idx = _mm512_cvtepu8_epi32(_mm_loadu_si128(nib.add(r * BLOCK) as *const __m128i));
                *a = _mm512_add_ps(*a, _mm512_permutexvar_ps(idx, t));
            }
            nib = nib.add(width);
        }
        let out = masked.as_mut_ptr().add(start);
        for (r, a) in acc.iter().enumerate() {
            _mm512_storeu_ps(out.add(r * BLOCK), *a);
        }
    }
}
