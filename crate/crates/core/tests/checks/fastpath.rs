//! Packed kernels against unpacked double-precision oracles.

use binnet::binarize::{binarize_deterministic, sign_binary};
use binnet::fastpath::{binary_conv_forward, binary_dense_forward, PackedConv, PackedDense};
use binnet::presets::{mlp, vgg_style};
use binnet::{InferenceMode, InferenceModel, PackedBinaryMatrix, Regularizer, Rng, Tensor};

const WIDTHS: [usize; 6] = [63, 64, 65, 127, 128, 129];
const INSTANCES: usize = 200;
const TOL: f64 = 1e-4;

fn uniform(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform() * 2.0 - 1.0)
}

/// `|got − want| ≤ tol · scale`, where `scale` bounds the magnitude of every
/// partial sum that produced `want`.
fn assert_within(got: f32, want: f64, scale: f64, what: &str) {
    let err = (got as f64 - want).abs();
    assert!(err <= TOL * scale.max(1.0), "{what}: {got} vs {want} (scale {scale})");
}

pub fn dense_kernel_across_word_boundaries() {
    let mut rng = Rng::seed_from(2024);
    for width in WIDTHS {
        for i in 0..INSTANCES {
            let outs = 1 + (rng.next() % 40) as usize;
            let batch = 1 + i % 5;
            let w = uniform(&[outs, width], &mut rng);
            let b = uniform(&[outs], &mut rng);
            let a = Tensor::from_fn(&[batch, width], |_| (rng.uniform() * 2.0 - 1.0) * 4.0);
            let layer = PackedDense::from_signs_of(&w, &b).unwrap();
            let got = binary_dense_forward(&layer, &a).unwrap();
            assert_eq!(got.shape(), [batch, outs]);
            for n in 0..batch {
                let row = a.row(n);
                let scale: f64 = row.iter().map(|&v| v.abs() as f64).sum::<f64>() + 1.0;
                for o in 0..outs {
                    let want: f64 = w
                        .row(o)
                        .iter()
                        .zip(row)
                        .map(|(&wv, &av)| sign_binary(wv) as f64 * av as f64)
                        .sum::<f64>()
                        + b.data()[o] as f64;
                    assert_within(got.data()[n * outs + o], want, scale, &format!("width {width}, instance {i}"));
                }
            }
        }
    }
}

pub fn packed_from_signs_equals_packed_from_tensor() {
    let mut rng = Rng::seed_from(7);
    for width in WIDTHS {
        let w = uniform(&[9, width], &mut rng);
        let b = Tensor::zeros(&[9]);
        let via_signs = PackedDense::from_signs_of(&w, &b).unwrap();
        let packed = PackedBinaryMatrix::pack(&binarize_deterministic(&w), 9, width).unwrap();
        let via_matrix = PackedDense::new(packed, vec![0.0; 9]).unwrap();
        let a = uniform(&[3, width], &mut rng);
        assert_eq!(
            binary_dense_forward(&via_signs, &a).unwrap().data(),
            binary_dense_forward(&via_matrix, &a).unwrap().data()
        );
    }
}

/// Direct convolution with `±1` kernels in double precision; also returns,
/// per output, the sum of absolute values of the inputs it touched.
fn conv_oracle(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> (Vec<f64>, Vec<f64>, [usize; 4]) {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [o, _, kh, kw] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Vec::with_capacity(n * o * oh * ow);
    let mut scale = Vec::with_capacity(out.capacity());
    for img in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (mut acc, mut mag) = (b.data()[oc] as f64, 1.0f64);
                    for ic in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let y = (oy * stride + dy) as isize - pad as isize;
                                let xx = (ox * stride + dx) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let v = x.data()[((img * c + ic) * h + y as usize) * w + xx as usize] as f64;
                                let s = sign_binary(k.data()[((oc * c + ic) * kh + dy) * kw + dx]) as f64;
                                acc += s * v;
                                mag += v.abs();
                            }
                        }
                    }
                    out.push(acc);
                    scale.push(mag);
                }
            }
        }
    }
    (out, scale, [n, o, oh, ow])
}

pub fn conv_kernel_across_word_boundaries() {
    // (channels, kernel) pairs whose patch length is each boundary width.
    let patches = [(7, 3), (16, 2), (65, 1), (127, 1), (32, 2), (129, 1)];
    let mut rng = Rng::seed_from(99);
    for ((c, k), width) in patches.into_iter().zip(WIDTHS) {
        assert_eq!(c * k * k, width);
        for i in 0..INSTANCES {
            let oc = 1 + (rng.next() % 12) as usize;
            let (stride, pad) = [(1, 0), (1, 1), (2, 1), (2, 0)][i % 4];
            let fit = |e: usize| e + (e + 2 * pad - k) % stride;
            let (h, w) = (fit(k + 2 + i % 5), fit(k + 3 + i % 4));
            let x = uniform(&[1 + i % 2, c, h, w], &mut rng);
            let kern = uniform(&[oc, c, k, k], &mut rng);
            let b = uniform(&[oc], &mut rng);
            let packed = PackedConv::from_signs_of(&kern, &b).unwrap();
            let got = binary_conv_forward(&packed, &x, stride, pad).unwrap();
            let (want, scale, shape) = conv_oracle(&x, &kern, &b, stride, pad);
            assert_eq!(got.shape(), shape);
            for ((&g, &wv), &s) in got.data().iter().zip(&want).zip(&scale) {
                assert_within(g, wv, s, &format!("patch {width}, instance {i}"));
            }
        }
    }
}

pub fn binary_model_matches_network_with_deterministic_weights() {
    let mut rng = Rng::seed_from(5);
    let mut mlp_net = mlp([1, 9, 7], &[65, 129, 10], &mut rng);
    let mut cnn = vgg_style([3, 8, 8], &[8, 16], 24, &mut rng);
    for net in [&mut mlp_net, &mut cnn] {
        // Move batch-norm running statistics away from their defaults.
        let xs = uniform(&[6, net.input_shape().iter().product()], &mut rng);
        let mut shape = vec![6];
        shape.extend_from_slice(net.input_shape());
        let xs = xs.reshape(&shape).unwrap();
        net.binarize(Regularizer::Deterministic, &mut rng);
        net.forward_train(&xs, true).unwrap();

        let model = InferenceModel::from_network(net, InferenceMode::Binary).unwrap();
        let probe = uniform(&shape, &mut rng);
        net.binarize(Regularizer::Deterministic, &mut rng);
        let want = net.forward(&probe, true).unwrap();
        let got = model.forward(&probe).unwrap();
        assert_eq!(got.shape(), want.shape());
        let scale = want.max_abs() as f64;
        for (&g, &w) in got.data().iter().zip(want.data()) {
            assert_within(g, w as f64, scale, "model logits");
        }
    }
}
