use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean cross-entropy of softmax(logits) against class indices, and its
/// gradient `(softmax − onehot) / batch` with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<(f32, Tensor)> {
    let (batch, classes) = logits.dims2()?;
    if targets.len() != batch {
        return Err(Error::dim(format!(
            "{} targets for a batch of {batch}",
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::Domain(format!(
            "target class {t} outside [0, {classes})"
        )));
    }
    let mut grad = Tensor::zeros(&[batch, classes]);
    let mut loss = 0.0f64;
    let inv_batch = 1.0 / batch as f32;
    for (n, &t) in targets.iter().enumerate() {
        let row = logits.row(n);
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| ((v - max) as f64).exp()).sum();
        let log_sum = sum.ln();
        loss += log_sum - (row[t] - max) as f64;
        let g = &mut grad.data_mut()[n * classes..(n + 1) * classes];
        for (c, gv) in g.iter_mut().enumerate() {
            let p = (((row[c] - max) as f64).exp() / sum) as f32;
            *gv = (p - if c == t { 1.0 } else { 0.0 }) * inv_batch;
        }
    }
    Ok(((loss / batch as f64) as f32, grad))
}
