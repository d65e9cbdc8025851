use crate::error::{Error, Result};
use crate::tensor::{conv_output_extent, Tensor};

fn pool_dims(x: &Tensor, window: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let s = x.shape4()?;
    if window == 0 {
        return Err(Error::dim("pool window must be positive"));
    }
    let oh = conv_output_extent(s.h, window, stride, 0)?;
    let ow = conv_output_extent(s.w, window, stride, 0)?;
    Ok((s.n * s.c, s.h, s.w, oh, ow, window))
}

/// Flat index (within its plane) of the window maximum; the first
/// occurrence wins on ties.
#[inline]
fn window_argmax(plane: &[f32], w: usize, oy: usize, ox: usize, window: usize, stride: usize) -> usize {
    let mut best = (oy * stride) * w + ox * stride;
    for dy in 0..window {
        let row = (oy * stride + dy) * w;
        for dx in 0..window {
            let idx = row + ox * stride + dx;
            if plane[idx] > plane[best] {
                best = idx;
            }
        }
    }
    best
}

pub fn maxpool_forward(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (planes, h, w, oh, ow, window) = pool_dims(x, window, stride)?;
    let s = x.shape();
    let mut out = Tensor::zeros(&[s[0], s[1], oh, ow]);
    for (src, dst) in x
        .data()
        .chunks_exact(h * w)
        .zip(out.data_mut().chunks_exact_mut(oh * ow))
        .take(planes)
    {
        for oy in 0..oh {
            for ox in 0..ow {
                dst[oy * ow + ox] = src[window_argmax(src, w, oy, ox, window, stride)];
            }
        }
    }
    Ok(out)
}

/// Routes each output gradient to the input position that won the forward max.
pub fn maxpool_backward(x: &Tensor, window: usize, stride: usize, d_out: &Tensor) -> Result<Tensor> {
    let (planes, h, w, oh, ow, window) = pool_dims(x, window, stride)?;
    let s = x.shape();
    if d_out.shape() != [s[0], s[1], oh, ow] {
        return Err(Error::dim(format!(
            "maxpool_backward: d_out {:?} does not match pooled shape",
            d_out.shape()
        )));
    }
    let mut dx = Tensor::zeros(x.shape());
    for ((src, dsrc), dy) in x
        .data()
        .chunks_exact(h * w)
        .zip(dx.data_mut().chunks_exact_mut(h * w))
        .zip(d_out.data().chunks_exact(oh * ow))
        .take(planes)
    {
        for oy in 0..oh {
            for ox in 0..ow {
                dsrc[window_argmax(src, w, oy, ox, window, stride)] += dy[oy * ow + ox];
            }
        }
    }
    Ok(dx)
}
