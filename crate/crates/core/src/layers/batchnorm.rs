use super::LayerGrad;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f32 = 1e-5;
pub const DEFAULT_MOMENTUM: f32 = 0.1;

/// Per-channel batch normalization over `N x F` activations or `N x C x H x W`
/// feature maps (statistics pooled over batch and spatial positions).
#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f32,
    /// Weight of the newest batch in the running averages.
    pub momentum: f32,
}

impl BatchNormLayer {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// `(outer, channels, inner)` such that element `(o, c, i)` sits at
/// `(o * channels + c) * inner + i`.
fn layout(x: &Tensor, channels: usize) -> Result<(usize, usize)> {
    let s = x.shape();
    let (c, inner) = match s.len() {
        2 => (s[1], 1),
        4 => (s[1], s[2] * s[3]),
        _ => {
            return Err(Error::dim(format!(
                "batch norm expects N x F or N x C x H x W, got {s:?}"
            )))
        }
    };
    if c != channels {
        return Err(Error::dim(format!(
            "batch norm has {channels} channels, input has {c}"
        )));
    }
    Ok((s[0], inner))
}

/// Biased per-channel mean and variance, accumulated in `f64`.
fn batch_stats(x: &Tensor, channels: usize, outer: usize, inner: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (outer * inner) as f64;
    let mut mean = vec![0.0f64; channels];
    let mut var = vec![0.0f64; channels];
    let data = x.data();
    for o in 0..outer {
        for (c, m) in mean.iter_mut().enumerate() {
            let base = (o * channels + c) * inner;
            *m += data[base..base + inner].iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for o in 0..outer {
        for c in 0..channels {
            let base = (o * channels + c) * inner;
            let mu = mean[c];
            var[c] += data[base..base + inner]
                .iter()
                .map(|&v| (v as f64 - mu).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

/// Training mode normalizes with batch statistics and folds them into the
/// running averages (variance stored unbiased). Inference mode uses the
/// running averages and leaves the layer untouched.
pub fn batchnorm_forward(layer: &mut BatchNormLayer, x: &Tensor, training: bool) -> Result<Tensor> {
    let channels = layer.channels();
    let (outer, inner) = layout(x, channels)?;
    let count = outer * inner;
    let (mean, var): (Vec<f64>, Vec<f64>) = if training {
        if count < 2 {
            return Err(Error::Domain(
                "batch norm in training mode needs at least two values per channel".into(),
            ));
        }
        let (mean, var) = batch_stats(x, channels, outer, inner);
        let m = layer.momentum as f64;
        let unbias = count as f64 / (count - 1) as f64;
        for c in 0..channels {
            let rm = &mut layer.running_mean.data_mut()[c];
            *rm = ((1.0 - m) * *rm as f64 + m * mean[c]) as f32;
            let rv = &mut layer.running_var.data_mut()[c];
            *rv = ((1.0 - m) * *rv as f64 + m * var[c] * unbias) as f32;
        }
        (mean, var)
    } else {
        return batchnorm_inference(layer, x);
    };
    Ok(normalize(layer, x, &mean, &var, outer, inner))
}

/// Inference-mode normalization with the running statistics.
pub fn batchnorm_inference(layer: &BatchNormLayer, x: &Tensor) -> Result<Tensor> {
    let (outer, inner) = layout(x, layer.channels())?;
    let mean: Vec<f64> = layer.running_mean.data().iter().map(|&v| v as f64).collect();
    let var: Vec<f64> = layer.running_var.data().iter().map(|&v| v as f64).collect();
    Ok(normalize(layer, x, &mean, &var, outer, inner))
}

fn normalize(
    layer: &BatchNormLayer,
    x: &Tensor,
    mean: &[f64],
    var: &[f64],
    outer: usize,
    inner: usize,
) -> Tensor {
    let channels = layer.channels();
    let mut out = Tensor::zeros(x.shape());
    let (src, dst) = (x.data(), out.data_mut());
    for c in 0..channels {
        let inv_std = 1.0 / (var[c] + layer.eps as f64).sqrt();
        let scale = (layer.gamma.data()[c] as f64 * inv_std) as f32;
        let (mu, beta) = (mean[c] as f32, layer.beta.data()[c]);
        for o in 0..outer {
            let base = (o * channels + c) * inner;
            for i in base..base + inner {
                dst[i] = (src[i] - mu).mul_add(scale, beta);
            }
        }
    }
    out
}

/// Training-mode gradient with respect to `x`, `gamma` and `beta`, with the
/// batch statistics recomputed from `x`.
pub fn batchnorm_backward(layer: &BatchNormLayer, x: &Tensor, d_out: &Tensor) -> Result<LayerGrad> {
    let channels = layer.channels();
    let (outer, inner) = layout(x, channels)?;
    if d_out.shape() != x.shape() {
        return Err(Error::dim("batchnorm_backward: gradient shape differs from input"));
    }
    let count = outer * inner;
    if count < 2 {
        return Err(Error::Domain(
            "batch norm in training mode needs at least two values per channel".into(),
        ));
    }
    let (mean, var) = batch_stats(x, channels, outer, inner);
    let mut d_input = Tensor::zeros(x.shape());
    let mut d_gamma = Tensor::zeros(&[channels]);
    let mut d_beta = Tensor::zeros(&[channels]);
    let (xs, dys) = (x.data(), d_out.data());
    let m = count as f64;
    for c in 0..channels {
        let inv_std = 1.0 / (var[c] + layer.eps as f64).sqrt();
        let gamma = layer.gamma.data()[c] as f64;
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for o in 0..outer {
            let base = (o * channels + c) * inner;
            for i in base..base + inner {
                let xhat = (xs[i] as f64 - mean[c]) * inv_std;
                sum_dy += dys[i] as f64;
                sum_dy_xhat += dys[i] as f64 * xhat;
            }
        }
        d_gamma.data_mut()[c] = sum_dy_xhat as f32;
        d_beta.data_mut()[c] = sum_dy as f32;
        // dx = γ·inv_std/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
        let k = gamma * inv_std / m;
        let dx = d_input.data_mut();
        for o in 0..outer {
            let base = (o * channels + c) * inner;
            for i in base..base + inner {
                let xhat = (xs[i] as f64 - mean[c]) * inv_std;
                dx[i] = (k * (m * dys[i] as f64 - sum_dy - xhat * sum_dy_xhat)) as f32;
            }
        }
    }
    Ok(LayerGrad {
        d_input,
        params: vec![d_gamma, d_beta],
    })
}
