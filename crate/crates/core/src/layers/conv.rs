use rayon::prelude::*;

use super::{BinaryShadow, LayerGrad};
use crate::binarize::Regularizer;
use crate::error::{Error, Result};
use crate::layers::he_init;
use crate::rng::Rng;
use crate::tensor::conv::{col2im, conv2d_into, conv_geometry, im2col};
use crate::tensor::gemm::{gemm, MatRef};
use crate::tensor::Tensor;

/// Convolution layer with `O x C x kh x kw` real kernels and a binarized shadow.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub kernels: Tensor,
    pub b: Tensor,
    pub stride: usize,
    pub pad: usize,
    shadow: BinaryShadow,
}

impl ConvLayer {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let kernels = he_init(&[out_channels, in_channels, kernel, kernel], rng);
        Self {
            shadow: BinaryShadow::new(kernels.shape()),
            kernels,
            b: Tensor::zeros(&[out_channels]),
            stride,
            pad,
        }
    }

    pub fn from_params(kernels: Tensor, b: Tensor, stride: usize, pad: usize) -> Result<Self> {
        if kernels.ndim() != 4 {
            return Err(Error::dim(format!(
                "kernels must be O x C x kh x kw, got {:?}",
                kernels.shape()
            )));
        }
        if b.shape() != [kernels.shape()[0]] {
            return Err(Error::dim("bias length must equal output channels"));
        }
        if stride == 0 {
            return Err(Error::dim("stride must be at least 1"));
        }
        Ok(Self {
            shadow: BinaryShadow::new(kernels.shape()),
            kernels,
            b,
            stride,
            pad,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_hw(&self) -> (usize, usize) {
        (self.kernels.shape()[2], self.kernels.shape()[3])
    }

    pub fn binarize(&mut self, reg: Regularizer, rng: &mut Rng) {
        self.shadow.refresh(reg, &self.kernels, rng);
    }

    pub fn invalidate_binary(&mut self) {
        self.shadow.invalidate();
    }

    pub fn binary_weights(&self) -> Option<&Tensor> {
        self.shadow.get()
    }
}

pub fn conv_forward(layer: &ConvLayer, input: &Tensor, use_binary: bool) -> Result<Tensor> {
    let s = input.shape4()?;
    let k = layer.shadow.select(&layer.kernels, use_binary, "conv")?;
    let g = conv_geometry(&s, k.shape(), layer.stride, layer.pad)?;
    let oc = layer.out_channels();
    let mut out = Tensor::zeros(&[s.n, oc, g.out_h, g.out_w]);
    conv2d_into(input.data(), &s, k.data(), oc, &g, out.data_mut());
    let pixels = g.out_pixels();
    for image in out.data_mut().chunks_exact_mut(oc * pixels) {
        for (plane, &b) in image.chunks_exact_mut(pixels).zip(layer.b.data()) {
            plane.iter_mut().for_each(|v| *v += b);
        }
    }
    Ok(out)
}

/// Convolution analogue of [`super::dense_backward`]; binary kernels are used
/// for the input gradient when `use_binary`.
pub fn conv_backward(
    layer: &ConvLayer,
    input: &Tensor,
    d_out: &Tensor,
    use_binary: bool,
) -> Result<LayerGrad> {
    let s = input.shape4()?;
    let k = layer.shadow.select(&layer.kernels, use_binary, "conv")?;
    let g = conv_geometry(&s, k.shape(), layer.stride, layer.pad)?;
    let oc = layer.out_channels();
    let expected = [s.n, oc, g.out_h, g.out_w];
    if d_out.shape() != expected {
        return Err(Error::dim(format!(
            "conv_backward: d_out {:?}, expected {expected:?}",
            d_out.shape()
        )));
    }
    let patch = g.patch_len();
    let pixels = g.out_pixels();
    let image_len = s.image_len();

    let mut d_input = Tensor::zeros(input.shape());
    // One kernel-gradient buffer per image, summed afterwards in image order
    // so the result does not depend on thread scheduling.
    let per_image: Vec<Vec<f32>> = d_input
        .data_mut()
        .par_chunks_mut(image_len)
        .zip(input.data().par_chunks(image_len))
        .zip(d_out.data().par_chunks(oc * pixels))
        .map(|((dx, x), dy)| {
            let mut cols = vec![0.0f32; patch * pixels];
            im2col(x, &g, &mut cols);
            let mut dk = vec![0.0f32; oc * patch];
            gemm(
                oc,
                patch,
                pixels,
                MatRef::row_major(dy, pixels),
                MatRef::transposed(&cols, pixels),
                &mut dk,
                false,
            );
            gemm(
                patch,
                pixels,
                oc,
                MatRef::transposed(k.data(), patch),
                MatRef::row_major(dy, pixels),
                &mut cols,
                false,
            );
            col2im(&cols, &g, dx);
            dk
        })
        .collect();

    let mut dk = Tensor::zeros(layer.kernels.shape());
    for part in &per_image {
        dk.data_mut().iter_mut().zip(part).for_each(|(a, b)| *a += b);
    }
    let mut db = Tensor::zeros(&[oc]);
    for image in d_out.data().chunks_exact(oc * pixels) {
        for (acc, plane) in db.data_mut().iter_mut().zip(image.chunks_exact(pixels)) {
            *acc += plane.iter().sum::<f32>();
        }
    }
    Ok(LayerGrad {
        d_input,
        params: vec![dk, db],
    })
}
