//! Weight binarization: the deterministic sign map, the hard-sigmoid driven
//! stochastic map, and the `[-1, 1]` clip applied after every update.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::{unit_from_bits, Rng};
use crate::tensor::Tensor;

/// Which weight regularizer a network trains with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    /// Full-precision weights; no binarization, no clipping.
    None,
    /// Sign binarization.
    Deterministic,
    /// Hard-sigmoid Bernoulli binarization, resampled every minibatch.
    Stochastic,
}

impl Regularizer {
    pub const ALL: [Regularizer; 3] = [
        Regularizer::None,
        Regularizer::Deterministic,
        Regularizer::Stochastic,
    ];

    pub fn is_binary(self) -> bool {
        !matches!(self, Regularizer::None)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::Deterministic => "det",
            Regularizer::Stochastic => "stoch",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Regularizer::None => 0,
            Regularizer::Deterministic => 1,
            Regularizer::Stochastic => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Regularizer::None),
            "det" | "deterministic" => Ok(Regularizer::Deterministic),
            "stoch" | "stochastic" => Ok(Regularizer::Stochastic),
            other => Err(Error::Domain(format!(
                "unknown regularizer {other:?} (expected none, det or stoch)"
            ))),
        }
    }
}

/// Fills `out` with a binarization of `w` under `reg`. With
/// [`Regularizer::None`] the weights are copied unchanged.
pub fn binarize_into(reg: Regularizer, w: &[f32], out: &mut [f32], rng: &mut Rng) {
    match reg {
        Regularizer::None => out.copy_from_slice(w),
        Regularizer::Deterministic => binarize_deterministic_into(w, out),
        Regularizer::Stochastic => binarize_stochastic_into(w, out, rng),
    }
}

/// `-1` for `w <= 0`, `+1` otherwise. Zero maps to `-1`.
#[inline]
pub fn sign_binary(w: f32) -> f32 {
    if w <= 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `max(0, min(1, (x + 1) / 2))`.
#[inline]
pub fn hard_sigmoid_scalar(x: f32) -> f32 {
    ((x + 1.0) * 0.5).clamp(0.0, 1.0)
}

pub fn binarize_deterministic(w: &Tensor) -> Tensor {
    w.map(sign_binary)
}

pub fn binarize_deterministic_into(w: &[f32], out: &mut [f32]) {
    debug_assert_eq!(w.len(), out.len());
    out.iter_mut().zip(w).for_each(|(o, &x)| *o = sign_binary(x));
}

pub fn hard_sigmoid(x: &Tensor) -> Tensor {
    x.map(hard_sigmoid_scalar)
}

/// Each element independently becomes `+1` with probability
/// `hard_sigmoid(w)`, else `-1`.
pub fn binarize_stochastic(w: &Tensor, rng: &mut Rng) -> Tensor {
    let mut out = Tensor::zeros(w.shape());
    binarize_stochastic_into(w.data(), out.data_mut(), rng);
    out
}

/// Draws are taken in flat row-major order. Each 64-bit output of the stream
/// feeds two consecutive elements: the high 32 bits the first, the low 32
/// bits the second, each reduced to a 24-bit uniform.
pub fn binarize_stochastic_into(w: &[f32], out: &mut [f32], rng: &mut Rng) {
    debug_assert_eq!(w.len(), out.len());
    const BLOCK: usize = 256;
    let mut draws = [0u64; BLOCK];
    let mut ws = w.chunks_exact(2 * BLOCK);
    let mut os = out.chunks_mut(2 * BLOCK);
    for (wb, ob) in (&mut ws).zip(&mut os) {
        draws.iter_mut().for_each(|d| *d = rng.next());
        for ((wp, op), &r) in wb.chunks_exact(2).zip(ob.chunks_exact_mut(2)).zip(&draws) {
            op[0] = draw(wp[0], (r >> 32) as u32);
            op[1] = draw(wp[1], r as u32);
        }
    }
    let (wt, ot) = (ws.remainder(), os.next().unwrap_or_default());
    for (wp, op) in wt.chunks(2).zip(ot.chunks_mut(2)) {
        let r = rng.next();
        op[0] = draw(wp[0], (r >> 32) as u32);
        if let (Some(&x), Some(o)) = (wp.get(1), op.get_mut(1)) {
            *o = draw(x, r as u32);
        }
    }
}

/// `+1` when the top 24 bits of `bits`, read as a uniform in `[0, 1)`, fall
/// below `hard_sigmoid(x)`.
#[inline(always)]
fn draw(x: f32, bits: u32) -> f32 {
    if unit_from_bits(bits >> 8) < hard_sigmoid_scalar(x) {
        1.0
    } else {
        -1.0
    }
}

pub fn clip_weights(w: &Tensor) -> Tensor {
    w.map(|x| x.clamp(-1.0, 1.0))
}

pub fn clip_inplace(w: &mut [f32]) {
    w.iter_mut().for_each(|x| *x = x.clamp(-1.0, 1.0));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_maps_to_minus_one() {
        assert_eq!(sign_binary(0.0), -1.0);
        assert_eq!(sign_binary(-0.0), -1.0);
        let t = Tensor::new(vec![2], vec![-0.3, 0.7]).unwrap();
        assert_eq!(binarize_deterministic(&t).data(), &[-1.0, 1.0]);
    }

    #[test]
    fn hard_sigmoid_points() {
        for (x, want) in [(0.0, 0.5), (-1.0, 0.0), (1.0, 1.0), (3.0, 1.0), (-7.0, 0.0)] {
            assert_eq!(hard_sigmoid_scalar(x), want, "x = {x}");
        }
    }

    #[test]
    fn saturated_stochastic_draws_are_certain() {
        let mut rng = Rng::seed_from(11);
        let plus = Tensor::full(&[1001], 1.0);
        let minus = Tensor::full(&[1001], -1.0);
        assert!(binarize_stochastic(&plus, &mut rng).data().iter().all(|&v| v == 1.0));
        assert!(binarize_stochastic(&minus, &mut rng).data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn stochastic_at_zero_is_balanced() {
        let mut rng = Rng::seed_from(5);
        let w = Tensor::zeros(&[100_000]);
        let mean = binarize_stochastic(&w, &mut rng).sum() as f64 / 1e5;
        assert!(mean.abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn odd_length_consumes_extra_draw() {
        let mut a = Rng::seed_from(9);
        let mut b = Rng::seed_from(9);
        let _ = binarize_stochastic(&Tensor::zeros(&[3]), &mut a);
        b.next();
        b.next();
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn blocked_draws_match_one_at_a_time() {
        for len in [0, 1, 2, 7, 511, 512, 513, 1024, 1537] {
            let w: Vec<f32> = (0..len).map(|i| (i as f32 * 0.37).sin()).collect();
            let mut fast = vec![0.0; len];
            let mut a = Rng::seed_from(len as u64);
            binarize_stochastic_into(&w, &mut fast, &mut a);
            let mut b = Rng::seed_from(len as u64);
            let mut r = 0;
            for (i, &x) in w.iter().enumerate() {
                if i % 2 == 0 {
                    r = b.next();
                }
                let bits = if i % 2 == 0 { (r >> 32) as u32 } else { r as u32 };
                let u = ((bits >> 8) as f64) / 16_777_216.0;
                let want = if u < hard_sigmoid_scalar(x) as f64 { 1.0 } else { -1.0 };
                assert_eq!(fast[i], want, "len {len}, element {i}");
            }
            assert_eq!(a.state(), b.state());
        }
    }

    #[test]
    fn clip_examples() {
        let t = Tensor::new(vec![3], vec![1.5, -2.0, 0.25]).unwrap();
        assert_eq!(clip_weights(&t).data(), &[1.0, -1.0, 0.25]);
    }
}
