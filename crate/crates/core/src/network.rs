//! Sequential networks: an input shape plus an ordered list of layers.

use crate::binarize::Regularizer;
use crate::error::{Error, Result};
use crate::layers::{
    batchnorm_backward, batchnorm_forward, check_dense_backward, conv_backward, conv_forward,
    dense_forward, dense_input_grad, maxpool_backward, maxpool_forward, relu_backward, relu_forward,
    BatchNormLayer, ConvLayer, DenseLayer,
};
use crate::rng::Rng;
use crate::tensor::{conv_output_extent, matmul_tn, Tensor};

#[derive(Clone, Debug)]
pub enum Layer {
    Dense(DenseLayer),
    Conv(ConvLayer),
    BatchNorm(BatchNormLayer),
    Relu,
    MaxPool { window: usize, stride: usize },
    /// `N x C x H x W` to `N x (C·H·W)`.
    Flatten,
}

/// How the optimizer treats a parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Dense weights or conv kernels: binarized for the passes and clipped
    /// to `[-1, 1]` after each update when a regularizer is active.
    Weight,
    /// Biases and batch-norm scale/shift: plain SGD, never binarized.
    Other,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Flatten => "flatten",
        }
    }

    fn params(&self) -> Vec<(&Tensor, ParamKind)> {
        match self {
            Layer::Dense(l) => vec![(&l.w, ParamKind::Weight), (&l.b, ParamKind::Other)],
            Layer::Conv(l) => vec![(&l.kernels, ParamKind::Weight), (&l.b, ParamKind::Other)],
            Layer::BatchNorm(l) => vec![(&l.gamma, ParamKind::Other), (&l.beta, ParamKind::Other)],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<(&mut Tensor, ParamKind)> {
        match self {
            Layer::Dense(l) => vec![(&mut l.w, ParamKind::Weight), (&mut l.b, ParamKind::Other)],
            Layer::Conv(l) => vec![
                (&mut l.kernels, ParamKind::Weight),
                (&mut l.b, ParamKind::Other),
            ],
            Layer::BatchNorm(l) => vec![
                (&mut l.gamma, ParamKind::Other),
                (&mut l.beta, ParamKind::Other),
            ],
            _ => Vec::new(),
        }
    }

    /// Output shape (without the batch extent) for a given input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || {
            Error::dim(format!(
                "{} layer cannot accept per-sample shape {input:?}",
                self.name()
            ))
        };
        match self {
            Layer::Dense(l) => match input {
                [f] if *f == l.in_features() => Ok(vec![l.out_features()]),
                _ => Err(bad()),
            },
            Layer::Conv(l) => match input {
                [c, h, w] if *c == l.in_channels() => {
                    let (kh, kw) = l.kernel_hw();
                    Ok(vec![
                        l.out_channels(),
                        conv_output_extent(*h, kh, l.stride, l.pad)?,
                        conv_output_extent(*w, kw, l.stride, l.pad)?,
                    ])
                }
                _ => Err(bad()),
            },
            Layer::BatchNorm(l) => match input {
                [f] | [f, _, _] if *f == l.channels() => Ok(input.to_vec()),
                _ => Err(bad()),
            },
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool { window, stride } => match input {
                [c, h, w] => Ok(vec![
                    *c,
                    conv_output_extent(*h, *window, *stride, 0)?,
                    conv_output_extent(*w, *window, *stride, 0)?,
                ]),
                _ => Err(bad()),
            },
            Layer::Flatten => input
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .map(|n| vec![n])
                .ok_or_else(bad),
        }
    }
}

/// A parameter gradient as produced by [`Network::backward_factored`].
#[derive(Clone, Debug)]
pub enum Grad {
    Full(Tensor),
    /// Dense weight gradient left as its factors: `d_outᵀ · input`.
    Outer { d_out: Tensor, input: Tensor },
}

impl Grad {
    pub fn materialize(self) -> Result<Tensor> {
        match self {
            Grad::Full(t) => Ok(t),
            Grad::Outer { d_out, input } => matmul_tn(&d_out, &input),
        }
    }
}

/// Layer inputs recorded by a training-mode forward pass.
pub struct Trace {
    inputs: Vec<Tensor>,
    pub output: Tensor,
}

#[derive(Clone, Debug)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    /// `input_shape` is the per-sample shape, e.g. `[1, 28, 28]`.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(Self {
            input_shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layers
            .iter()
            .try_fold(self.input_shape.clone(), |s, l| l.output_shape(&s))
            .expect("validated at construction")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Refreshes every weight layer's binary shadow.
    pub fn binarize(&mut self, reg: Regularizer, rng: &mut Rng) {
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(l) => l.binarize(reg, rng),
                Layer::Conv(l) => l.binarize(reg, rng),
                _ => {}
            }
        }
    }

    pub fn invalidate_binary(&mut self) {
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(l) => l.invalidate_binary(),
                Layer::Conv(l) => l.invalidate_binary(),
                _ => {}
            }
        }
    }

    pub fn params(&self) -> Vec<(&Tensor, ParamKind)> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<(&mut Tensor, ParamKind)> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(t, _)| t.len()).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.ndim() < 2 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::dim(format!(
                "network expects samples of shape {:?}, got batch {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Training-mode forward pass (batch statistics, running averages
    /// updated) keeping every layer input for [`Network::backward`].
    pub fn forward_train(&mut self, x: &Tensor, use_binary: bool) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &mut self.layers {
            let next = layer_forward(layer, &cur, use_binary, true)?;
            inputs.push(std::mem::replace(&mut cur, next));
        }
        Ok(Trace {
            inputs,
            output: cur,
        })
    }

    /// Inference-mode forward pass (running batch-norm statistics).
    pub fn forward(&mut self, x: &Tensor, use_binary: bool) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer_forward(layer, &cur, use_binary, false)?;
        }
        Ok(cur)
    }

    /// Backpropagates `d_output` through the recorded pass. Returns one
    /// gradient per parameter, in [`Network::params`] order.
    pub fn backward(&self, trace: &Trace, d_output: Tensor, use_binary: bool) -> Result<Vec<Tensor>> {
        self.backward_factored(trace, d_output, use_binary)?
            .into_iter()
            .map(Grad::materialize)
            .collect()
    }

    /// As [`Network::backward`], but dense weight gradients stay factored;
    /// with small batches they are much cheaper to apply than to form.
    pub fn backward_factored(&self, trace: &Trace, d_output: Tensor, use_binary: bool) -> Result<Vec<Grad>> {
        if d_output.shape() != trace.output.shape() {
            return Err(Error::dim("output gradient shape differs from network output"));
        }
        let mut grads_rev: Vec<Vec<Grad>> = Vec::with_capacity(self.layers.len());
        let mut d = d_output;
        for (idx, (layer, input)) in self.layers.iter().zip(&trace.inputs).enumerate().rev() {
            // The network input needs no gradient.
            let needs_input_grad = idx > 0;
            let full = |params: Vec<Tensor>| params.into_iter().map(Grad::Full).collect();
            let (d_in, params) = match layer {
                Layer::Dense(l) => {
                    check_dense_backward(l, input, &d)?;
                    let d_in = if needs_input_grad {
                        Some(dense_input_grad(l, &d, use_binary)?)
                    } else {
                        None
                    };
                    let db = Grad::Full(d.sum_axis(0)?);
                    (d_in, vec![Grad::Outer { d_out: d.clone(), input: input.clone() }, db])
                }
                Layer::Conv(l) => {
                    let g = conv_backward(l, input, &d, use_binary)?;
                    (Some(g.d_input), full(g.params))
                }
                Layer::BatchNorm(l) => {
                    let g = batchnorm_backward(l, input, &d)?;
                    (Some(g.d_input), full(g.params))
                }
                Layer::Relu => (Some(relu_backward(input, &d)?), Vec::new()),
                Layer::MaxPool { window, stride } => {
                    (Some(maxpool_backward(input, *window, *stride, &d)?), Vec::new())
                }
                Layer::Flatten => (Some(d.reshape(input.shape())?), Vec::new()),
            };
            grads_rev.push(params);
            match d_in {
                Some(next) if needs_input_grad => d = next,
                _ => break,
            }
        }
        Ok(grads_rev.into_iter().rev().flatten().collect())
    }
}

fn layer_forward(layer: &mut Layer, x: &Tensor, use_binary: bool, training: bool) -> Result<Tensor> {
    match layer {
        Layer::Dense(l) => dense_forward(l, x, use_binary),
        Layer::Conv(l) => conv_forward(l, x, use_binary),
        Layer::BatchNorm(l) => batchnorm_forward(l, x, training),
        Layer::Relu => Ok(relu_forward(x)),
        Layer::MaxPool { window, stride } => maxpool_forward(x, *window, *stride),
        Layer::Flatten => {
            let n = x.shape()[0];
            let rest = x.len() / n;
            x.clone().reshape(&[n, rest])
        }
    }
}
