use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes the gradient where the input was strictly positive.
pub fn relu_backward(x: &Tensor, d_out: &Tensor) -> Result<Tensor> {
    if x.shape() != d_out.shape() {
        return Err(Error::dim("relu_backward: gradient shape differs from input"));
    }
    let mut d = d_out.clone();
    d.data_mut()
        .iter_mut()
        .zip(x.data())
        .for_each(|(g, &v)| {
            if v <= 0.0 {
                *g = 0.0
            }
        });
    Ok(d)
}
