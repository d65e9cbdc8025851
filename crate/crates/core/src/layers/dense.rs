use super::{BinaryShadow, LayerGrad};
use crate::binarize::Regularizer;
use crate::error::{Error, Result};
use crate::layers::he_init;
use crate::rng::Rng;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

/// Fully connected layer with `out x in` real weights and a binarized shadow.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Tensor,
    shadow: BinaryShadow,
}

impl DenseLayer {
    /// He-initialised weights, zero bias.
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        let w = he_init(&[out_features, in_features], rng);
        Self {
            shadow: BinaryShadow::new(w.shape()),
            w,
            b: Tensor::zeros(&[out_features]),
        }
    }

    pub fn from_params(w: Tensor, b: Tensor) -> Result<Self> {
        let (out, _) = w.dims2()?;
        if b.shape() != [out] {
            return Err(Error::dim(format!(
                "bias shape {:?} does not match {out} outputs",
                b.shape()
            )));
        }
        Ok(Self {
            shadow: BinaryShadow::new(w.shape()),
            w,
            b,
        })
    }

    pub fn in_features(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.w.shape()[0]
    }

    /// Recomputes the binary weights from the current real weights.
    pub fn binarize(&mut self, reg: Regularizer, rng: &mut Rng) {
        self.shadow.refresh(reg, &self.w, rng);
    }

    /// Marks the binary weights stale; call after changing `w`.
    pub fn invalidate_binary(&mut self) {
        self.shadow.invalidate();
    }

    pub fn binary_weights(&self) -> Option<&Tensor> {
        self.shadow.get()
    }
}

/// `a_prev · wbᵀ + b` when `use_binary`, else `a_prev · wᵀ + b`.
pub fn dense_forward(layer: &DenseLayer, a_prev: &Tensor, use_binary: bool) -> Result<Tensor> {
    let (_, inputs) = a_prev.dims2()?;
    if inputs != layer.in_features() {
        return Err(Error::dim(format!(
            "dense layer expects {} inputs, got {inputs}",
            layer.in_features()
        )));
    }
    let w = layer.shadow.select(&layer.w, use_binary, "dense")?;
    let mut out = matmul_nt(a_prev, w)?;
    let outs = layer.out_features();
    for row in out.data_mut().chunks_exact_mut(outs) {
        row.iter_mut().zip(layer.b.data()).for_each(|(o, b)| *o += b);
    }
    Ok(out)
}

/// Input gradient through the same weights the forward pass used
/// (`d_out · wb` in binary mode), plus `dW = d_outᵀ · a_prev` and
/// `db = Σ_batch d_out`. The weight gradient is taken with respect to the
/// weights actually used and is applied to the real weights unchanged.
pub fn dense_backward(
    layer: &DenseLayer,
    a_prev: &Tensor,
    d_out: &Tensor,
    use_binary: bool,
) -> Result<LayerGrad> {
    check_backward(layer, a_prev, d_out)?;
    Ok(LayerGrad {
        d_input: dense_input_grad(layer, d_out, use_binary)?,
        params: vec![matmul_tn(d_out, a_prev)?, d_out.sum_axis(0)?],
    })
}

pub(crate) fn check_backward(layer: &DenseLayer, a_prev: &Tensor, d_out: &Tensor) -> Result<()> {
    let (batch, outs) = d_out.dims2()?;
    let (batch_in, inputs) = a_prev.dims2()?;
    if batch != batch_in || outs != layer.out_features() || inputs != layer.in_features() {
        return Err(Error::dim(format!(
            "dense_backward: d_out {:?} incompatible with input {:?} and a {}x{} layer",
            d_out.shape(),
            a_prev.shape(),
            layer.out_features(),
            layer.in_features()
        )));
    }
    Ok(())
}

pub(crate) fn dense_input_grad(layer: &DenseLayer, d_out: &Tensor, use_binary: bool) -> Result<Tensor> {
    let w = layer.shadow.select(&layer.w, use_binary, "dense")?;
    matmul(d_out, w)
}
