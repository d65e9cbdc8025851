use crate::binarize::{binarize_into, Regularizer};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Binarized copy of a layer's real weights, valid until the next update.
#[derive(Clone, Debug)]
pub(crate) struct BinaryShadow {
    wb: Tensor,
    fresh: bool,
}

impl BinaryShadow {
    pub(crate) fn new(shape: &[usize]) -> Self {
        Self {
            wb: Tensor::zeros(shape),
            fresh: false,
        }
    }

    pub(crate) fn refresh(&mut self, reg: Regularizer, w: &Tensor, rng: &mut Rng) {
        binarize_into(reg, w.data(), self.wb.data_mut(), rng);
        self.fresh = true;
    }

    pub(crate) fn invalidate(&mut self) {
        self.fresh = false;
    }

    pub(crate) fn get(&self) -> Option<&Tensor> {
        self.fresh.then_some(&self.wb)
    }

    /// The weights a pass should use: the fresh binary copy when `use_binary`,
    /// the real weights otherwise.
    pub(crate) fn select<'a>(&'a self, w: &'a Tensor, use_binary: bool, layer: &str) -> Result<&'a Tensor> {
        if !use_binary {
            return Ok(w);
        }
        self.get().ok_or_else(|| {
            Error::State(format!(
                "{layer}: binary weights are stale; binarize before a binary pass"
            ))
        })
    }
}
