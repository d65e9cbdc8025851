//! Single-precision matrix multiply.
//!
//! The general path packs operands into `MR x KC` / `KC x NR` panels and runs
//! a 6x16 register-blocked micro-kernel. Skinny shapes (few rows, or a short
//! inner dimension) take streaming paths instead, since packing a large
//! operand for a batch of four rows would cost as much as the product.

use super::{dot, Tensor};
use crate::error::{Error, Result};

const MR: usize = 12;
const NR: usize = 32;
const KC: usize = 256;
const MC: usize = 96;
const NC: usize = 1024;

const SKINNY_ROWS: usize = 4;
const SHORT_INNER: usize = 8;

/// Strided read-only view of a matrix: element `(i, j)` lives at
/// `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f32],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            rs: cols,
            cs: 1,
        }
    }

    /// View of the transpose of a row-major `rows x cols` matrix.
    pub fn transposed(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            rs: 1,
            cs: cols,
        }
    }

    #[inline(always)]
    fn at(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.rs + j * self.cs]
    }
}

/// `C[m x n] (+)= A[m x k] · B[k x n]` with row-major, contiguous `C`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    n: usize,
    k: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    if !accumulate {
        c[..m * n].iter_mut().for_each(|v| *v = 0.0);
    }
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if super::has_avx512() && m <= SKINNY_ROWS && a.cs == 1 {
        // SAFETY: AVX-512F is present and the operand extents were checked
        // by the callers; the kernels index only inside `m x k`, `k x n`
        // and `m x n`.
        if b.cs == 1 {
            unsafe { avx512::skinny_rows_axpy(m, n, k, a, b, c) };
            return;
        }
        if b.rs == 1 {
            unsafe { avx512::skinny_rows_dot(m, n, k, a, b, c) };
            return;
        }
    }
    if m <= SKINNY_ROWS && a.cs == 1 && b.cs == 1 {
        skinny_rows_axpy(m, n, k, a, b, c);
    } else if m <= SKINNY_ROWS && a.cs == 1 && b.rs == 1 {
        skinny_rows_dot(m, n, k, a, b, c);
    } else if k <= SHORT_INNER && b.cs == 1 {
        short_inner(m, n, k, a, b, c);
    } else {
        packed(m, n, k, a, b, c);
    }
}

/// `A · B` for row-major matrices.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner dimensions differ: {m}x{k} · {k2}x{n}"
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(
        m,
        n,
        k,
        MatRef::row_major(a.data(), k),
        MatRef::row_major(b.data(), n),
        out.data_mut(),
        false,
    );
    Ok(out)
}

/// `A · Bᵀ` where `B` is stored `n x k`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_nt inner dimensions differ: {m}x{k} · ({n}x{k2})ᵀ"
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(
        m,
        n,
        k,
        MatRef::row_major(a.data(), k),
        MatRef::transposed(b.data(), k),
        out.data_mut(),
        false,
    );
    Ok(out)
}

/// `Aᵀ · B` where `A` is stored `k x m`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_tn inner dimensions differ: ({k}x{m})ᵀ · {k2}x{n}"
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(
        m,
        n,
        k,
        MatRef::transposed(a.data(), m),
        MatRef::row_major(b.data(), n),
        out.data_mut(),
        false,
    );
    Ok(out)
}

/// Few rows, `B` rows contiguous: stream `B` once, updating every row of `C`.
fn skinny_rows_axpy(m: usize, n: usize, k: usize, a: MatRef<'_>, b: MatRef<'_>, c: &mut [f32]) {
    for p in 0..k {
        let brow = &b.data[p * b.rs..p * b.rs + n];
        for i in 0..m {
            let coef = a.at(i, p);
            if coef == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            crow.iter_mut()
                .zip(brow)
                .for_each(|(cv, &bv)| *cv = coef.mul_add(bv, *cv));
        }
    }
}

/// Few rows, `B` columns contiguous: one dot product per output.
fn skinny_rows_dot(m: usize, n: usize, k: usize, a: MatRef<'_>, b: MatRef<'_>, c: &mut [f32]) {
    for j in 0..n {
        let bcol = &b.data[j * b.cs..j * b.cs + k];
        for i in 0..m {
            let arow = &a.data[i * a.rs..i * a.rs + k];
            c[i * n + j] += dot(arow, bcol);
        }
    }
}

/// Short inner dimension: each row of `C` is a combination of `k` rows of `B`.
fn short_inner(m: usize, n: usize, k: usize, a: MatRef<'_>, b: MatRef<'_>, c: &mut [f32]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let coef = a.at(i, p);
            let brow = &b.data[p * b.rs..p * b.rs + n];
            crow.iter_mut()
                .zip(brow)
                .for_each(|(cv, &bv)| *cv = coef.mul_add(bv, *cv));
        }
    }
}

fn packed(m: usize, n: usize, k: usize, a: MatRef<'_>, b: MatRef<'_>, c: &mut [f32]) {
    let mut bpack = vec![0.0f32; KC * NC.min(n.div_ceil(NR) * NR)];
    let mut apack = vec![0.0f32; KC * MC];
    for jc in (0..n).step_by(NC) {
        let nc = NC.min(n - jc);
        for pc in (0..k).step_by(KC) {
            let kc = KC.min(k - pc);
            pack_b(b, pc, kc, jc, nc, &mut bpack);
            for ic in (0..m).step_by(MC) {
                let mc = MC.min(m - ic);
                pack_a(a, ic, mc, pc, kc, &mut apack);
                for jr in (0..nc).step_by(NR) {
                    let nr = NR.min(nc - jr);
                    let bpanel = &bpack[jr * kc..jr * kc + kc * NR];
                    for ir in (0..mc).step_by(MR) {
                        let mr = MR.min(mc - ir);
                        let apanel = &apack[ir * kc..ir * kc + kc * MR];
                        let acc = kernel(kc, apanel, bpanel);
                        for r in 0..mr {
                            let row = (ic + ir + r) * n + jc + jr;
                            c[row..row + nr]
                                .iter_mut()
                                .zip(&acc[r][..nr])
                                .for_each(|(cv, av)| *cv += av);
                        }
                    }
                }
            }
        }
    }
}

/// Packs `A[ic.., pc..]` into row panels of `MR`, each stored `kc x MR`.
fn pack_a(a: MatRef<'_>, ic: usize, mc: usize, pc: usize, kc: usize, out: &mut [f32]) {
    for ir in (0..mc).step_by(MR) {
        let mr = MR.min(mc - ir);
        let panel = &mut out[ir * kc..ir * kc + kc * MR];
        for p in 0..kc {
            for r in 0..MR {
                panel[p * MR + r] = if r < mr {
                    a.at(ic + ir + r, pc + p)
                } else {
                    0.0
                };
            }
        }
    }
}

/// Packs `B[pc.., jc..]` into column panels of `NR`, each stored `kc x NR`.
fn pack_b(b: MatRef<'_>, pc: usize, kc: usize, jc: usize, nc: usize, out: &mut [f32]) {
    for jr in (0..nc).step_by(NR) {
        let nr = NR.min(nc - jr);
        let panel = &mut out[jr * kc..jr * kc + kc * NR];
        for p in 0..kc {
            let dst = &mut panel[p * NR..(p + 1) * NR];
            if b.cs == 1 && nr == NR {
                let src = (pc + p) * b.rs + jc + jr;
                dst.copy_from_slice(&b.data[src..src + NR]);
            } else {
                for (col, d) in dst.iter_mut().enumerate() {
                    *d = if col < nr {
                        b.at(pc + p, jc + jr + col)
                    } else {
                        0.0
                    };
                }
            }
        }
    }
}

#[inline(always)]
fn kernel(kc: usize, apanel: &[f32], bpanel: &[f32]) -> [[f32; NR]; MR] {
    assert!(apanel.len() >= kc * MR && bpanel.len() >= kc * NR);
    #[cfg(target_arch = "x86_64")]
    if super::has_avx512() {
        // SAFETY: feature checked; panel lengths asserted above.
        return unsafe { avx512::micro_kernel(kc, apanel.as_ptr(), bpanel.as_ptr()) };
    }
    micro_kernel(kc, apanel, bpanel)
}

/// Portable `MR x NR` tile product; the per-element operation order matches
/// the vector kernel.
#[inline(always)]
fn micro_kernel(kc: usize, apanel: &[f32], bpanel: &[f32]) -> [[f32; NR]; MR] {
    let mut acc = [[0.0f32; NR]; MR];
    for p in 0..kc {
        let bv: &[f32; NR] = bpanel[p * NR..(p + 1) * NR].try_into().unwrap();
        let av: &[f32; MR] = apanel[p * MR..(p + 1) * MR].try_into().unwrap();
        for r in 0..MR {
            let a = av[r];
            for col in 0..NR {
                acc[r][col] = a.mul_add(bv[col], acc[r][col]);
            }
        }
    }
    acc
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    use super::{MatRef, MR, NR};

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn micro_kernel(kc: usize, a: *const f32, b: *const f32) -> [[f32; NR]; MR] {
        let mut acc = [[_mm512_setzero_ps(); 2]; MR];
        for p in 0..kc {
            let b0 = _mm512_loadu_ps(b.add(p * NR));
            let b1 = _mm512_loadu_ps(b.add(p * NR + 16));
            let ap = a.add(p * MR);
            for (r, acc) in acc.iter_mut().enumerate() {
                let av = _mm512_set1_ps(*ap.add(r));
                acc[0] = _mm512_fmadd_ps(av, b0, acc[0]);
                acc[1] = _mm512_fmadd_ps(av, b1, acc[1]);
            }
        }
        let mut out = [[0.0f32; NR]; MR];
        for (o, a) in out.iter_mut().zip(&acc) {
            _mm512_storeu_ps(o.as_mut_ptr(), a[0]);
            _mm512_storeu_ps(o.as_mut_ptr().add(16), a[1]);
        }
        out
    }

    #[inline(always)]
    fn tail_mask(len: usize) -> __mmask16 {
        if len >= 16 {
            0xFFFF
        } else {
            ((1u32 << len) - 1) as __mmask16
        }
    }

    /// `C += A · B` for at most four rows with `A` and `B` rows contiguous:
    /// a 64-column strip of `C` stays in registers while `B` streams past.
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn skinny_rows_axpy(m: usize, n: usize, k: usize, a: MatRef<'_>, b: MatRef<'_>, c: &mut [f32]) {
        assert!(m <= 4 && c.len() >= m * n);
        assert!(a.data.len() >= (m - 1) * a.rs + k && b.data.len() >= (k - 1) * b.rs + n);
        let (ap, bp, cp) = (a.data.as_ptr(), b.data.as_ptr(), c.as_mut_ptr());
        let mut j = 0;
        while j < n {
            let width = (n - j).min(64);
            let masks: [__mmask16; 4] = std::array::from_fn(|q| tail_mask(width.saturating_sub(16 * q)));
            let mut acc = [[_mm512_setzero_ps(); 4]; 4];
            for p in 0..k {
                let brow = bp.add(p * b.rs + j);
                let bv: [__m512; 4] = std::array::from_fn(|q| {
                    if masks[q] == 0 {
                        _mm512_setzero_ps()
                    } else {
                        _mm512_maskz_loadu_ps(masks[q], brow.add(16 * q))
                    }
                });
                for (i, acc) in acc.iter_mut().enumerate().take(m) {
                    let coef = _mm512_set1_ps(*ap.add(i * a.rs + p));
                    for q in 0..4 {
                        acc[q] = _mm512_fmadd_ps(coef, bv[q], acc[q]);
                    }
                }
            }
            for (i, acc) in acc.iter().enumerate().take(m) {
                for q in 0..4 {
                    if masks[q] != 0 {
                        let dst = cp.add(i * n + j + 16 * q);
                        let sum = _mm512_add_ps(_mm512_maskz_loadu_ps(masks[q], dst), acc[q]);
                        _mm512_mask_storeu_ps(dst, masks[q], sum);
                    }
                }
            }
            j += width;
        }
    }

    /// `C += A · B` for at most four rows with `B` columns contiguous: four
    /// columns at a time, sixteen dot products in flight.
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn skinny_rows_dot(m: usize, n: usize, k: usize, a: MatRef<'_>, b: MatRef<'_>, c: &mut [f32]) {
        assert!(m <= 4 && c.len() >= m * n);
        assert!(a.data.len() >= (m - 1) * a.rs + k && b.data.len() >= (n - 1) * b.cs + k);
        let (ap, bp) = (a.data.as_ptr(), b.data.as_ptr());
        let mut j = 0;
        while j < n {
            let cols = (n - j).min(4);
            let mut acc = [[_mm512_setzero_ps(); 4]; 4];
            let mut p = 0;
            while p < k {
                let mask = tail_mask(k - p);
                let bv: [__m512; 4] = std::array::from_fn(|q| {
                    if q < cols {
                        _mm512_maskz_loadu_ps(mask, bp.add((j + q) * b.cs + p))
                    } else {
                        _mm512_setzero_ps()
                    }
                });
                for (i, acc) in acc.iter_mut().enumerate().take(m) {
                    let av = _mm512_maskz_loadu_ps(mask, ap.add(i * a.rs + p));
                    for q in 0..4 {
                        acc[q] = _mm512_fmadd_ps(av, bv[q], acc[q]);
                    }
                }
                p += 16;
            }
            for (i, acc) in acc.iter().enumerate().take(m) {
                for (q, v) in acc.iter().enumerate().take(cols) {
                    c[i * n + j + q] += _mm512_reduce_add_ps(*v);
                }
            }
            j += cols;
        }
    }
}
