use super::conv::{binary_conv_forward, PackedConv};
use super::dense::{binary_dense_forward, PackedDense};
use crate::binarize::Regularizer;
use crate::error::{Error, Result};
use crate::layers::{batchnorm_inference, conv_forward, dense_forward, maxpool_forward, relu_forward};
use crate::layers::{BatchNormLayer, ConvLayer, DenseLayer};
use crate::network::{Layer, Network};
use crate::tensor::{argmax, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferenceMode {
    /// Deterministic signs of the real weights, run through packed kernels.
    Binary,
    /// The real weights as stored.
    FullPrecision,
}

impl InferenceMode {
    pub fn for_regularizer(reg: Regularizer) -> Self {
        if reg.is_binary() {
            InferenceMode::Binary
        } else {
            InferenceMode::FullPrecision
        }
    }
}

#[derive(Clone, Debug)]
enum Stage {
    BinDense(PackedDense),
    BinConv { kernels: PackedConv, stride: usize, pad: usize },
    Dense(DenseLayer),
    Conv(ConvLayer),
    BatchNorm(BatchNormLayer),
    Relu,
    MaxPool { window: usize, stride: usize },
    Flatten,
}

/// A read-only snapshot of a network prepared for inference. Batch norm uses
/// the running statistics.
#[derive(Clone, Debug)]
pub struct InferenceModel {
    input_shape: Vec<usize>,
    stages: Vec<Stage>,
    mode: InferenceMode,
}

impl InferenceModel {
    pub fn from_network(net: &Network, mode: InferenceMode) -> Result<Self> {
        let binary = mode == InferenceMode::Binary;
        let stages = net
            .layers()
            .iter()
            .map(|layer| {
                Ok(match layer {
                    Layer::Dense(l) if binary => Stage::BinDense(PackedDense::from_signs_of(&l.w, &l.b)?),
                    Layer::Dense(l) => Stage::Dense(DenseLayer::from_params(l.w.clone(), l.b.clone())?),
                    Layer::Conv(l) if binary => Stage::BinConv {
                        kernels: PackedConv::from_signs_of(&l.kernels, &l.b)?,
                        stride: l.stride,
                        pad: l.pad,
                    },
                    Layer::Conv(l) => Stage::Conv(ConvLayer::from_params(
                        l.kernels.clone(),
                        l.b.clone(),
                        l.stride,
                        l.pad,
                    )?),
                    Layer::BatchNorm(l) => Stage::BatchNorm(l.clone()),
                    Layer::Relu => Stage::Relu,
                    Layer::MaxPool { window, stride } => Stage::MaxPool {
                        window: *window,
                        stride: *stride,
                    },
                    Layer::Flatten => Stage::Flatten,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input_shape: net.input_shape().to_vec(),
            stages,
            mode,
        })
    }

    pub fn mode(&self) -> InferenceMode {
        self.mode
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Logits for a batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.ndim() < 2 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::dim(format!(
                "model expects samples of shape {:?}, got batch {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        let mut cur = x.clone();
        for stage in &self.stages {
            cur = match stage {
                Stage::BinDense(l) => binary_dense_forward(l, &cur)?,
                Stage::BinConv { kernels, stride, pad } => binary_conv_forward(kernels, &cur, *stride, *pad)?,
                Stage::Dense(l) => dense_forward(l, &cur, false)?,
                Stage::Conv(l) => conv_forward(l, &cur, false)?,
                Stage::BatchNorm(l) => batchnorm_inference(l, &cur)?,
                Stage::Relu => relu_forward(&cur),
                Stage::MaxPool { window, stride } => maxpool_forward(&cur, *window, *stride)?,
                Stage::Flatten => {
                    let n = cur.shape()[0];
                    let rest = cur.len() / n;
                    cur.reshape(&[n, rest])?
                }
            };
        }
        Ok(cur)
    }

    /// Predicted class of a single image given as a flat `C·H·W` slice.
    pub fn predict(&self, image: &[f32]) -> Result<usize> {
        let mut shape = vec![1];
        shape.extend_from_slice(&self.input_shape);
        let logits = self.forward(&Tensor::new(shape, image.to_vec())?)?;
        Ok(argmax(logits.data()))
    }
}
