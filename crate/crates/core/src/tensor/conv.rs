//! 2-D cross-correlation lowered to im2col + GEMM.

use rayon::prelude::*;

use super::gemm::{gemm, MatRef};
use super::{Shape4, Tensor};
use crate::error::{Error, Result};

/// Output extent along one spatial axis. Errors unless the window tiles the
/// padded input exactly.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::dim("stride must be at least 1"));
    }
    let padded = input + 2 * pad;
    if kernel == 0 || kernel > padded {
        return Err(Error::dim(format!(
            "kernel extent {kernel} does not fit padded input extent {padded}"
        )));
    }
    if !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::dim(format!(
            "(input {input} + 2·pad {pad} − kernel {kernel}) is not divisible by stride {stride}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Geometry of a convolution over one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let out_h = conv_output_extent(height, kh, stride, pad)?;
        let out_w = conv_output_extent(width, kw, stride, pad)?;
        Ok(Self {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    /// Rows of the unrolled patch matrix, `C·kh·kw`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    /// Columns of the unrolled patch matrix, `H'·W'`.
    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unrolls one CHW image into a `(C·kh·kw) x (H'·W')` matrix whose column
/// `p` holds the receptive field of output pixel `p`. Padding reads as zero.
pub fn im2col(image: &[f32], g: &ConvGeometry, cols: &mut [f32]) {
    let pixels = g.out_pixels();
    debug_assert_eq!(image.len(), g.channels * g.height * g.width);
    debug_assert_eq!(cols.len(), g.patch_len() * pixels);
    for (row, dst) in cols.chunks_exact_mut(pixels).enumerate() {
        im2col_row(image, g, row, dst);
    }
}

/// Row `row` (patch index `(c·kh + ki)·kw + kj`) of [`im2col`].
pub(crate) fn im2col_row(image: &[f32], g: &ConvGeometry, row: usize, dst: &mut [f32]) {
    let (c, kk) = (row / (g.kh * g.kw), row % (g.kh * g.kw));
    let (ki, kj) = (kk / g.kw, kk % g.kw);
    let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
    // Output columns whose input column lies inside the image.
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride).min(g.out_w);
    let hi = (g.width + g.pad).saturating_sub(kj).div_ceil(g.stride).clamp(lo, g.out_w);
    if g.stride == 1 && g.out_w == g.width {
        shifted_plane(plane, g, ki, kj, lo, hi, dst);
        return;
    }
    for oy in 0..g.out_h {
        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
        let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
        if iy < 0 || iy >= g.height as isize || lo == hi {
            line.fill(0.0);
            continue;
        }
        let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
        line[..lo].fill(0.0);
        line[hi..].fill(0.0);
        let x0 = lo * g.stride + kj - g.pad;
        if g.stride == 1 {
            line[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
        } else {
            for (d, &v) in line[lo..hi].iter_mut().zip(src[x0..].iter().step_by(g.stride)) {
                *d = v;
            }
        }
    }
}

/// One im2col row for stride 1 when output and input rows have the same
/// length: the valid rows form one contiguous block of the input plane, and
/// only the columns that wrapped around need clearing afterwards.
fn shifted_plane(plane: &[f32], g: &ConvGeometry, ki: usize, kj: usize, lo: usize, hi: usize, dst: &mut [f32]) {
    let w = g.width;
    let oy_lo = g.pad.saturating_sub(ki).min(g.out_h);
    let oy_hi = (g.height + g.pad).saturating_sub(ki).clamp(oy_lo, g.out_h);
    dst[..oy_lo * w].fill(0.0);
    dst[oy_hi * w..].fill(0.0);
    if oy_lo == oy_hi || lo == hi {
        dst[oy_lo * w..oy_hi * w].fill(0.0);
        return;
    }
    let first = oy_lo * w + lo;
    let last = (oy_hi - 1) * w + hi;
    let src = (oy_lo + ki - g.pad) * w + lo + kj - g.pad;
    dst[first..last].copy_from_slice(&plane[src..src + last - first]);
    for line in dst[oy_lo * w..oy_hi * w].chunks_exact_mut(w) {
        line[..lo].fill(0.0);
        line[hi..].fill(0.0);
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix entries back onto the image,
/// accumulating where receptive fields overlap.
pub fn col2im(cols: &[f32], g: &ConvGeometry, image: &mut [f32]) {
    let pixels = g.out_pixels();
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * pixels..(row + 1) * pixels];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            plane[iy as usize * g.width + ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Shape checks shared by every convolution entry point.
pub(crate) fn conv_geometry(input: &Shape4, kernels: &[usize], stride: usize, pad: usize) -> Result<ConvGeometry> {
    let [_o, kc, kh, kw] = match *kernels {
        [o, c, h, w] => [o, c, h, w],
        _ => {
            return Err(Error::dim(format!(
                "kernels must be O x C x kh x kw, got {kernels:?}"
            )))
        }
    };
    if kc != input.c {
        return Err(Error::dim(format!(
            "kernel expects {kc} input channels, input has {}",
            input.c
        )));
    }
    ConvGeometry::new(input.c, input.h, input.w, kh, kw, stride, pad)
}

/// Cross-correlation of an NCHW batch with `O x C x kh x kw` kernels.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let s = input.shape4()?;
    let g = conv_geometry(&s, kernels.shape(), stride, pad)?;
    let out_c = kernels.shape()[0];
    let mut out = Tensor::zeros(&[s.n, out_c, g.out_h, g.out_w]);
    conv2d_into(input.data(), &s, kernels.data(), out_c, &g, out.data_mut());
    Ok(out)
}

pub(crate) fn conv2d_into(
    input: &[f32],
    s: &Shape4,
    kernels: &[f32],
    out_c: usize,
    g: &ConvGeometry,
    out: &mut [f32],
) {
    let k = g.patch_len();
    let pixels = g.out_pixels();
    let image_len = s.image_len();
    out.par_chunks_mut(out_c * pixels)
        .zip(input.par_chunks(image_len))
        .for_each_init(
            || vec![0.0f32; k * pixels],
            |cols, (dst, image)| {
                im2col(image, g, cols);
                gemm(
                    out_c,
                    pixels,
                    k,
                    MatRef::row_major(kernels, k),
                    MatRef::row_major(cols, pixels),
                    dst,
                    false,
                );
            },
        );
}
