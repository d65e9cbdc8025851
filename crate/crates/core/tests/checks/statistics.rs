//! Binarization statistics and the learning-rate schedule.

use binnet::binarize::{binarize_deterministic, binarize_stochastic, hard_sigmoid_scalar, sign_binary};
use binnet::training::decay_learning_rate;
use binnet::{Rng, Tensor};

const N: usize = 100_000;

fn sample_mean(w: f32, seed: u64) -> f64 {
    let t = Tensor::full(&[N], w);
    let b = binarize_stochastic(&t, &mut Rng::seed_from(seed));
    assert!(b.data().iter().all(|&v| v == 1.0 || v == -1.0));
    b.data().iter().map(|&v| v as f64).sum::<f64>() / N as f64
}

pub fn empirical_mean_tracks_the_hard_sigmoid() {
    let bound = 4.0 / (N as f64).sqrt();
    for w in [-0.8f32, -0.2, 0.0, 0.5] {
        for seed in [1, 2, 3] {
            let want = 2.0 * hard_sigmoid_scalar(w) as f64 - 1.0;
            let got = sample_mean(w, seed);
            assert!((got - want).abs() <= bound, "w={w} seed={seed}: mean {got}, expected {want}");
        }
    }
}

pub fn saturated_weights_are_certain() {
    assert_eq!(sample_mean(1.0, 4), 1.0);
    assert_eq!(sample_mean(3.0, 4), 1.0);
    assert_eq!(sample_mean(-1.0, 4), -1.0);
    assert_eq!(sample_mean(-3.0, 4), -1.0);
}

pub fn draws_are_not_correlated_between_neighbours() {
    let t = Tensor::full(&[N], 0.0);
    let b = binarize_stochastic(&t, &mut Rng::seed_from(5));
    let d = b.data();
    let lag1: f64 = d.windows(2).map(|p| (p[0] * p[1]) as f64).sum::<f64>() / (N - 1) as f64;
    assert!(lag1.abs() <= 4.0 / (N as f64).sqrt(), "lag-1 correlation {lag1}");
}

pub fn zero_binarizes_to_minus_one() {
    assert_eq!(sign_binary(0.0), -1.0);
    assert_eq!(sign_binary(-0.0), -1.0);
    assert_eq!(binarize_deterministic(&Tensor::zeros(&[3])).data(), &[-1.0; 3]);
}

pub fn learning_rate_matches_closed_form() {
    let eta0 = 0.001f64;
    let mut eta = eta0;
    for e in 1..=200usize {
        let next = decay_learning_rate(eta, e);
        // The sequence leaves the f64 range near epoch 179 and both sides
        // flush to zero together.
        assert!(next < eta || next == 0.0);
        eta = next;
        let closed = eta0 * 0.01f64.powf((e * (e + 1)) as f64 / 200.0);
        assert!((eta - closed).abs() <= 1e-12 * closed, "epoch {e}: {eta:e} vs {closed:e}");
    }
    assert!((decay_learning_rate(eta0, 1) - 9.5499e-4).abs() < 1e-8);
}
