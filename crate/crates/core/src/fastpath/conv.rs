use rayon::prelude::*;

use super::dense::PackedDense;
use crate::error::{Error, Result};
use crate::packed::PackedBinaryMatrix;
use crate::tensor::conv::{conv_geometry, im2col_row};
use crate::tensor::Tensor;

/// Output pixels per table column.
const PANEL: usize = 32;
/// Groups whose tables are resident at once (`CHUNK · 16 · PANEL` floats).
const CHUNK: usize = 8;

/// One table entry (or accumulator) across a panel, cache-line aligned.
#[derive(Clone, Copy)]
#[repr(C, align(64))]
struct Lanes([f32; PANEL]);

const ZERO: Lanes = Lanes([0.0; PANEL]);

/// `O x C x kh x kw` binary kernels packed as an `O x (C·kh·kw)` dense layer.
#[derive(Clone, Debug)]
pub struct PackedConv {
    dense: PackedDense,
    shape: [usize; 4],
}

impl PackedConv {
    /// `signs` must hold exact `±1` values.
    pub fn pack(signs: &Tensor, b: &Tensor) -> Result<Self> {
        let shape = kernel_shape(signs)?;
        let patch = shape[1] * shape[2] * shape[3];
        let packed = PackedBinaryMatrix::pack(signs, shape[0], patch)?;
        Self::build(packed, b, shape)
    }

    /// Packs the deterministic binarization of real kernels.
    pub fn from_signs_of(kernels: &Tensor, b: &Tensor) -> Result<Self> {
        let shape = kernel_shape(kernels)?;
        let patch = shape[1] * shape[2] * shape[3];
        let packed = PackedBinaryMatrix::pack_signs_of(kernels.data(), shape[0], patch)?;
        Self::build(packed, b, shape)
    }

    fn build(packed: PackedBinaryMatrix, b: &Tensor, shape: [usize; 4]) -> Result<Self> {
        Ok(Self {
            dense: PackedDense::new(packed, b.data().to_vec())?,
            shape,
        })
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn as_dense(&self) -> &PackedDense {
        &self.dense
    }
}

fn kernel_shape(k: &Tensor) -> Result<[usize; 4]> {
    match *k.shape() {
        [o, c, h, w] => Ok([o, c, h, w]),
        _ => Err(Error::dim(format!(
            "kernels must be O x C x kh x kw, got {:?}",
            k.shape()
        ))),
    }
}

/// Convolution with packed kernels. The receptive fields of `PANEL`
/// neighbouring output pixels share one set of subset-sum tables, so each
/// (output channel, group) costs one table-row add across the panel.
pub fn binary_conv_forward(kernels: &PackedConv, input: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let s = input.shape4()?;
    let g = conv_geometry(&s, &kernels.shape, stride, pad)?;
    let oc = kernels.shape[0];
    let pixels = g.out_pixels();
    let patch = g.patch_len();
    let depth = patch.div_ceil(4) * 4;
    let panels = pixels.div_ceil(PANEL);
    let mut out = Tensor::zeros(&[s.n, oc, g.out_h, g.out_w]);
    out.data_mut()
        .par_chunks_mut(oc * pixels)
        .zip(input.data().par_chunks(s.image_len()))
        .for_each_init(
            || {
                (
                    vec![0.0f32; pixels],
                    vec![ZERO; panels * depth],
                    vec![ZERO; oc],
                    vec![[ZERO; 16]; CHUNK],
                )
            },
            |(line, cols, acc, tables), (dst, image)| {
                // Patch rows regrouped `[panel][row][pixel in panel]`;
                // padding rows and pixels stay zero.
                for row in 0..patch {
                    im2col_row(image, &g, row, line);
                    let mut segs = line.chunks_exact(PANEL);
                    for (pi, seg) in (&mut segs).enumerate() {
                        cols[pi * depth + row] = Lanes(seg.try_into().expect("panel width"));
                    }
                    let rest = segs.remainder();
                    cols[(panels - 1) * depth + row].0[..rest.len()].copy_from_slice(rest);
                }
                for (pi, panel_cols) in cols.chunks_exact(depth).enumerate() {
                    let p0 = pi * PANEL;
                    let width = PANEL.min(pixels - p0);
                    let total = panel(kernels, panel_cols, acc, tables);
                    let bias = kernels.dense.bias();
                    for (o, (m, &b)) in acc.iter().zip(bias).enumerate() {
                        let d = &mut dst[o * pixels + p0..][..width];
                        for ((d, &m), &t) in d.iter_mut().zip(&m.0).zip(&total.0) {
                            *d = 2.0f32.mul_add(m, -t) + b;
                        }
                    }
                }
            },
        );
    Ok(out)
}

/// Masked sums of every output channel over one panel, groups summed in
/// order. Returns the plain column sums of the panel.
fn panel(kernels: &PackedConv, cols: &[Lanes], acc: &mut [Lanes], tables: &mut [[Lanes; 16]]) -> Lanes {
    let groups = cols.len() / 4;
    let packed = kernels.dense.packed();
    let mut total = ZERO;
    acc.fill(ZERO);
    for g0 in (0..groups).step_by(CHUNK) {
        let count = CHUNK.min(groups - g0);
        for (gi, table) in tables[..count].iter_mut().enumerate() {
            let x = &cols[4 * (g0 + gi)..][..4];
            build_table([&x[0], &x[1], &x[2], &x[3]], table, &mut total);
        }
        sweep(packed.words(), packed.words_per_row(), g0, &tables[..count], acc);
    }
    total
}

/// Fills the 16 subset sums of four rows and adds the rows to `total`.
/// Entry `m` extends the entry without its highest bit, so each sum is
/// formed in increasing row order.
fn build_table(x: [&Lanes; 4], table: &mut [Lanes; 16], total: &mut Lanes) {
    #[cfg(target_arch = "x86_64")]
    if crate::tensor::has_avx512() {
        // SAFETY: feature checked; all operands are aligned `Lanes`.
        unsafe { avx512::build_table(x, table, total) };
        return;
    }
    build_table_portable(x, table, total);
}

fn build_table_portable(x: [&Lanes; 4], table: &mut [Lanes; 16], total: &mut Lanes) {
    for x in &x {
        for (t, &v) in total.0.iter_mut().zip(&x.0) {
            *t += v;
        }
    }
    table[0] = ZERO;
    for m in 1usize..16 {
        let top = m.ilog2() as usize;
        if m == 1 << top {
            table[m] = *x[top];
            continue;
        }
        let (head, tail) = table.split_at_mut(m);
        let base = &head[m ^ (1 << top)];
        for ((t, &b), &v) in tail[0].0.iter_mut().zip(&base.0).zip(&x[top].0) {
            *t = b + v;
        }
    }
}

/// `acc[o] += Σ_gi tables[gi][nibble(o, g0 + gi)]`, groups in order; `g0`
/// is a multiple of `CHUNK`.
fn sweep(words: &[u64], words_per_row: usize, g0: usize, tables: &[[Lanes; 16]], acc: &mut [Lanes]) {
    assert!(words.len() >= acc.len() * words_per_row && g0 / 16 < words_per_row && tables.len() <= CHUNK && g0.is_multiple_of(CHUNK));
    #[cfg(target_arch = "x86_64")]
    if crate::tensor::has_avx512() {
        // SAFETY: feature checked; word indices are bounded by the assert.
        unsafe { avx512::sweep(words, words_per_row, g0, tables, acc) };
        return;
    }
    sweep_portable(words, words_per_row, g0, tables, acc);
}

fn sweep_portable(words: &[u64], words_per_row: usize, g0: usize, tables: &[[Lanes; 16]], acc: &mut [Lanes]) {
    for (a, row) in acc.iter_mut().zip(words.chunks_exact(words_per_row)) {
        let w = row[g0 / 16] >> (4 * (g0 % 16));
        for (gi, t) in tables.iter().enumerate() {
            let t = &t[(w >> (4 * gi) & 0xF) as usize];
            for (a, &v) in a.0.iter_mut().zip(&t.0) {
                *a += v;
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    use super::{Lanes, CHUNK, PANEL};

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn build_table(x: [&Lanes; 4], table: &mut [Lanes; 16], total: &mut Lanes) {
        let x: [[__m512; 2]; 4] =
            std::array::from_fn(|k| [_mm512_load_ps(x[k].0.as_ptr()), _mm512_load_ps(x[k].0.as_ptr().add(16))]);
        let t = total.0.as_mut_ptr();
        let mut lo = _mm512_load_ps(t);
        let mut hi = _mm512_load_ps(t.add(16));
        for x in &x {
            lo = _mm512_add_ps(lo, x[0]);
            hi = _mm512_add_ps(hi, x[1]);
        }
        _mm512_store_ps(t, lo);
        _mm512_store_ps(t.add(16), hi);
        let put = |m: usize, v: [__m512; 2], table: &mut [Lanes; 16]| {
            _mm512_store_ps(table[m].0.as_mut_ptr(), v[0]);
            _mm512_store_ps(table[m].0.as_mut_ptr().add(16), v[1]);
        };
        let add = |a: [__m512; 2], b: [__m512; 2]| [_mm512_add_ps(a[0], b[0]), _mm512_add_ps(a[1], b[1])];
        let zero = [_mm512_setzero_ps(); 2];
        let mut low = [zero; 8];
        for m in 1..8usize {
            let top = m.ilog2() as usize;
            low[m] = if m == 1 << top { x[top] } else { add(low[m ^ (1 << top)], x[top]) };
        }
        for m in 0..8 {
            put(m, low[m], table);
            put(m + 8, if m == 0 { x[3] } else { add(low[m], x[3]) }, table);
        }
    }

    /// Output channels interleaved so their add chains overlap.
    const LANES: usize = 4;

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn sweep(
        words: &[u64],
        words_per_row: usize,
        g0: usize,
        tables: &[[Lanes; 16]],
        acc: &mut [Lanes],
    ) {
        let mut o = 0;
        let mut blocks = acc.chunks_exact_mut(LANES);
        for a in &mut blocks {
            channels::<LANES>(words, words_per_row, g0, tables, o, a);
            o += LANES;
        }
        for a in blocks.into_remainder().chunks_mut(1) {
            channels::<1>(words, words_per_row, g0, tables, o, a);
            o += 1;
        }
    }

    #[target_feature(enable = "avx512f")]
    unsafe fn channels<const C: usize>(
        words: &[u64],
        words_per_row: usize,
        g0: usize,
        tables: &[[Lanes; 16]],
        o: usize,
        acc: &mut [Lanes],
    ) {
        let tab = tables.as_ptr() as *const f32;
        let w: [u64; C] = std::array::from_fn(|c| words[(o + c) * words_per_row + g0 / 16] >> (4 * (g0 % 16)));
        let mut lo: [__m512; C] = std::array::from_fn(|c| _mm512_load_ps(acc[c].0.as_ptr()));
        let mut hi: [__m512; C] = std::array::from_fn(|c| _mm512_load_ps(acc[c].0.as_ptr().add(16)));
        let count = tables.len().min(CHUNK);
        for gi in 0..count {
            for c in 0..C {
                let n = (w[c] >> (4 * gi) & 0xF) as usize;
                let t = tab.add((gi * 16 + n) * PANEL);
                lo[c] = _mm512_add_ps(lo[c], _mm512_load_ps(t));
                hi[c] = _mm512_add_ps(hi[c], _mm512_load_ps(t.add(16)));
            }
        }
        for c in 0..C {
            _mm512_store_ps(acc[c].0.as_mut_ptr(), lo[c]);
            _mm512_store_ps(acc[c].0.as_mut_ptr().add(16), hi[c]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d;

    #[test]
    fn unit_kernels() {
        let x = Tensor::from_fn(&[1, 1, 3, 4], |i| i as f32 - 5.5);
        let plus = PackedConv::pack(&Tensor::full(&[1, 1, 1, 1], 1.0), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(binary_conv_forward(&plus, &x, 1, 0).unwrap(), x);
        let minus = PackedConv::pack(&Tensor::full(&[1, 1, 1, 1], -1.0), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(binary_conv_forward(&minus, &x, 1, 0).unwrap(), x.scale(-1.0));
    }

    #[test]
    fn matches_unpacked_conv() {
        let mut rng = crate::rng::Rng::seed_from(33);
        let k = Tensor::from_fn(&[8, 3, 3, 3], |_| if rng.next() & 1 == 1 { 1.0 } else { -1.0 });
        let x = Tensor::from_fn(&[1, 3, 8, 8], |_| rng.uniform() * 2.0 - 1.0);
        let packed = PackedConv::pack(&k, &Tensor::zeros(&[8])).unwrap();
        let got = binary_conv_forward(&packed, &x, 1, 1).unwrap();
        let want = conv2d(&x, &k, 1, 1).unwrap();
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() <= 1e-4 * w.abs().max(1.0));
        }
    }

    #[test]
    fn ragged_panels_and_groups() {
        // 45-wide patches (12 groups, last one padded) and 35 output pixels
        // (one full panel plus a ragged one), strided.
        let mut rng = crate::rng::Rng::seed_from(5);
        let k = Tensor::from_fn(&[11, 5, 3, 3], |_| if rng.next() & 1 == 1 { 1.0 } else { -1.0 });
        let b = Tensor::from_fn(&[11], |i| i as f32 * 0.25 - 1.0);
        let x = Tensor::from_fn(&[2, 5, 13, 9], |_| rng.uniform() * 2.0 - 1.0);
        let packed = PackedConv::pack(&k, &b).unwrap();
        let got = binary_conv_forward(&packed, &x, 2, 1).unwrap();
        let want = conv2d(&x, &k, 2, 1).unwrap();
        assert_eq!(got.shape(), want.shape());
        for (i, (g, w)) in got.data().iter().zip(want.data()).enumerate() {
            let w = w + b.data()[(i / 35) % 11];
            assert!((g - w).abs() <= 1e-4 * w.abs().max(1.0), "{g} vs {w}");
        }
    }

    #[test]
    fn portable_table_and_sweep_match_dispatched() {
        let mut rng = crate::rng::Rng::seed_from(8);
        let rows: Vec<Lanes> = (0..4)
            .map(|_| Lanes(std::array::from_fn(|_| rng.uniform() * 2.0 - 1.0)))
            .collect();
        let x = [&rows[0], &rows[1], &rows[2], &rows[3]];
        let (mut t1, mut t2) = ([ZERO; 16], [ZERO; 16]);
        let (mut s1, mut s2) = (ZERO, ZERO);
        build_table(x, &mut t1, &mut s1);
        build_table_portable(x, &mut t2, &mut s2);
        assert!(t1.iter().zip(&t2).all(|(a, b)| a.0 == b.0));
        assert_eq!(s1.0, s2.0);

        let tables = vec![t1; CHUNK];
        let words: Vec<u64> = (0..6 * 2).map(|_| rng.next()).collect();
        let (mut a1, mut a2) = (vec![ZERO; 6], vec![ZERO; 6]);
        sweep(&words, 2, CHUNK, &tables, &mut a1);
        sweep_portable(&words, 2, CHUNK, &tables, &mut a2);
        assert!(a1.iter().zip(&a2).all(|(a, b)| a.0 == b.0));
    }

    #[test]
    fn channel_mismatch() {
        let packed = PackedConv::pack(&Tensor::full(&[2, 3, 3, 3], 1.0), &Tensor::zeros(&[2])).unwrap();
        assert!(binary_conv_forward(&packed, &Tensor::zeros(&[1, 2, 5, 5]), 1, 1).is_err());
    }
}
