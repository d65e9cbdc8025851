use rand_distr::{Distribution, StandardNormal};

use crate::rng::Rng;
use crate::tensor::Tensor;

/// I.i.d. normal draws with mean 0 and standard deviation `sqrt(2 / fan_in)`,
/// where `fan_in` is the product of every extent after the first
/// (`in` for `out x in`, `C·kh·kw` for kernels).
pub fn he_init(shape: &[usize], rng: &mut Rng) -> Tensor {
    let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        (z * std) as f32
    })
}
