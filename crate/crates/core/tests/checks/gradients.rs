//! Central finite-difference checks for every backward pass.

use binnet::layers::{
    batchnorm_backward, batchnorm_forward, conv_backward, conv_forward, dense_backward,
    dense_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward,
    softmax_cross_entropy, BatchNormLayer, ConvLayer, DenseLayer,
};
use binnet::{Layer, Network, Regularizer, Rng, Tensor};

const TRIALS: u64 = 20;
const TOL: f64 = 1e-3;

fn normal(shape: &[usize], rng: &mut Rng, scale: f32) -> Tensor {
    Tensor::from_fn(shape, |_| (rng.uniform() * 2.0 - 1.0 + rng.uniform() * 2.0 - 1.0) * scale)
}

/// Central difference at steps `h` and `h/2`, Richardson-combined.
fn numeric_grad(x: &Tensor, h: f32, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut x = x.clone();
    let mut central = |x: &mut Tensor, i: usize, h: f32| {
        let orig = x.data()[i];
        let (up, down) = (orig + h, orig - h);
        x.data_mut()[i] = up;
        let fp = f(x);
        x.data_mut()[i] = down;
        let fm = f(x);
        x.data_mut()[i] = orig;
        (fp - fm) / (up as f64 - down as f64)
    };
    (0..x.len())
        .map(|i| {
            let d1 = central(&mut x, i, h);
            let d2 = central(&mut x, i, h / 2.0);
            (4.0 * d2 - d1) / 3.0
        })
        .collect()
}

/// Norm-wise relative error. Gradients that vanish identically (a bias
/// feeding batch norm, say) are compared against a small absolute floor.
fn rel_err(analytic: &Tensor, numeric: &[f64]) -> f64 {
    rel_err_floor(analytic, numeric, 1e-3)
}

fn rel_err_floor(analytic: &Tensor, numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for (&a, &n) in analytic.data().iter().zip(numeric) {
        diff += (a as f64 - n).powi(2);
        na += (a as f64).powi(2);
        nn += n * n;
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(floor)
}

/// `Σ r·y` in double precision.
fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn check(label: &str, trial: u64, analytic: &Tensor, numeric: &[f64], tol: f64) {
    let e = rel_err(analytic, numeric);
    assert!(e <= tol, "{label}, trial {trial}: relative error {e:.3e} > {tol:e}");
}

pub fn dense_full_precision() {
    for t in 0..TRIALS {
        let mut rng = Rng::seed_from(100 + t);
        let (batch, inputs, outputs) = (1 + t as usize % 4, 3 + t as usize % 29, 2 + (t as usize * 7) % 31);
        let layer = DenseLayer::from_params(
            normal(&[outputs, inputs], &mut rng, 0.5),
            normal(&[outputs], &mut rng, 0.5),
        )
        .unwrap();
        let x = normal(&[batch, inputs], &mut rng, 1.0);
        let r = normal(&[batch, outputs], &mut rng, 1.0);
        let g = dense_backward(&layer, &x, &r, false).unwrap();

        let num_x = numeric_grad(&x, 1e-2, |x| project(&dense_forward(&layer, x, false).unwrap(), &r));
        check("dense d_input", t, &g.d_input, &num_x, TOL);
        let num_w = numeric_grad(&layer.w, 1e-2, |w| {
            let l = DenseLayer::from_params(w.clone(), layer.b.clone()).unwrap();
            project(&dense_forward(&l, &x, false).unwrap(), &r)
        });
        check("dense dW", t, &g.params[0], &num_w, TOL);
        let num_b = numeric_grad(&layer.b, 1e-2, |b| {
            let l = DenseLayer::from_params(layer.w.clone(), b.clone()).unwrap();
            project(&dense_forward(&l, &x, false).unwrap(), &r)
        });
        check("dense db", t, &g.params[1], &num_b, TOL);
    }
}

pub fn dense_binary_input_gradient_uses_binary_weights() {
    for t in 0..TRIALS {
        let mut rng = Rng::seed_from(200 + t);
        let (batch, inputs, outputs) = (2, 5 + t as usize, 3 + t as usize % 7);
        let mut layer = DenseLayer::new(inputs, outputs, &mut rng);
        let reg = if t % 2 == 0 {
            Regularizer::Deterministic
        } else {
            Regularizer::Stochastic
        };
        layer.binarize(reg, &mut rng);
        let x = normal(&[batch, inputs], &mut rng, 1.0);
        let r = normal(&[batch, outputs], &mut rng, 1.0);
        let g = dense_backward(&layer, &x, &r, true).unwrap();
        let num_x = numeric_grad(&x, 1e-2, |x| project(&dense_forward(&layer, x, true).unwrap(), &r));
        check("binary dense d_input", t, &g.d_input, &num_x, TOL);

        // The weight gradient is the derivative with respect to the binary
        // weights used in the pass.
        let wb = layer.binary_weights().unwrap().clone();
        let num_w = numeric_grad(&wb, 1e-2, |w| {
            let l = DenseLayer::from_params(w.clone(), layer.b.clone()).unwrap();
            project(&dense_forward(&l, &x, false).unwrap(), &r)
        });
        check("binary dense dW", t, &g.params[0], &num_w, TOL);
    }
}

pub fn conv_full_precision() {
    for t in 0..TRIALS {
        let mut rng = Rng::seed_from(300 + t);
        // The reference geometry first, then a spread of strides and pads.
        const GEOMETRIES: [(usize, usize, usize, usize, usize, usize, usize, usize); 5] = [
            (1, 2, 5, 5, 3, 3, 1, 1),
            (2, 1, 4, 6, 2, 3, 1, 0),
            (1, 3, 5, 7, 4, 3, 2, 1),
            (2, 2, 5, 5, 1, 1, 2, 0),
            (1, 2, 6, 4, 3, 2, 2, 0),
        ];
        let (n, c, h, w, oc, k, stride, pad) = GEOMETRIES[t as usize % GEOMETRIES.len()];
        let layer = ConvLayer::from_params(
            normal(&[oc, c, k, k], &mut rng, 0.5),
            normal(&[oc], &mut rng, 0.5),
            stride,
            pad,
        )
        .unwrap();
        let x = normal(&[n, c, h, w], &mut rng, 1.0);
        let y = conv_forward(&layer, &x, false).unwrap();
        let r = normal(y.shape(), &mut rng, 1.0);
        let g = conv_backward(&layer, &x, &r, false).unwrap();

        let num_x = numeric_grad(&x, 1e-2, |x| project(&conv_forward(&layer, x, false).unwrap(), &r));
        check("conv d_input", t, &g.d_input, &num_x, TOL);
        let num_k = numeric_grad(&layer.kernels, 1e-2, |k| {
            let l = ConvLayer::from_params(k.clone(), layer.b.clone(), stride, pad).unwrap();
            project(&conv_forward(&l, &x, false).unwrap(), &r)
        });
        check("conv dK", t, &g.params[0], &num_k, TOL);
        let num_b = numeric_grad(&layer.b, 1e-2, |b| {
            let l = ConvLayer::from_params(layer.kernels.clone(), b.clone(), stride, pad).unwrap();
            project(&conv_forward(&l, &x, false).unwrap(), &r)
        });
        check("conv db", t, &g.params[1], &num_b, TOL);
    }
}

pub fn conv_binary_input_gradient() {
    for t in 0..TRIALS {
        let mut rng = Rng::seed_from(350 + t);
        let mut layer = ConvLayer::new(2, 3, 3, 1 + t as usize % 2, 1, &mut rng);
        layer.binarize(Regularizer::Deterministic, &mut rng);
        let x = normal(&[1, 2, 5, 5], &mut rng, 1.0);
        let y = conv_forward(&layer, &x, true).unwrap();
        let r = normal(y.shape(), &mut rng, 1.0);
        let g = conv_backward(&layer, &x, &r, true).unwrap();
        let num_x = numeric_grad(&x, 1e-2, |x| project(&conv_forward(&layer, x, true).unwrap(), &r));
        check("binary conv d_input", t, &g.d_input, &num_x, TOL);
    }
}

fn batchnorm_case(t: u64, shape: &[usize]) {
    let mut rng = Rng::seed_from(400 + t);
    let channels = shape[1];
    let mut layer = BatchNormLayer::new(channels);
    layer.gamma = Tensor::from_fn(&[channels], |_| 0.5 + rng.uniform());
    layer.beta = normal(&[channels], &mut rng, 0.5);
    let x = normal(shape, &mut rng, 1.5);
    let r = normal(shape, &mut rng, 1.0);
    let g = batchnorm_backward(&layer, &x, &r).unwrap();

    let eval = |l: &BatchNormLayer, x: &Tensor| {
        let mut l = l.clone();
        project(&batchnorm_forward(&mut l, x, true).unwrap(), &r)
    };
    let num_x = numeric_grad(&x, 1e-2, |x| eval(&layer, x));
    check("batchnorm d_input", t, &g.d_input, &num_x, TOL);
    let num_gamma = numeric_grad(&layer.gamma, 1e-2, |gamma| {
        let mut l = layer.clone();
        l.gamma = gamma.clone();
        eval(&l, &x)
    });
    check("batchnorm d_gamma", t, &g.params[0], &num_gamma, TOL);
    let num_beta = numeric_grad(&layer.beta, 1e-2, |beta| {
        let mut l = layer.clone();
        l.beta = beta.clone();
        eval(&l, &x)
    });
    check("batchnorm d_beta", t, &g.params[1], &num_beta, TOL);
}

pub fn batchnorm_dense_activations() {
    for t in 0..TRIALS {
        batchnorm_case(t, &[3 + t as usize % 7, 1 + t as usize % 5]);
    }
}

pub fn batchnorm_feature_maps() {
    for t in 0..TRIALS {
        batchnorm_case(50 + t, &[1 + t as usize % 3, 1 + t as usize % 4, 2, 3]);
    }
}

pub fn relu_away_from_the_kink() {
    for t in 0..TRIALS {
        let mut rng = Rng::seed_from(500 + t);
        let x = Tensor::from_fn(&[3, 4 + t as usize], |_| {
            let v = 0.1 + rng.uniform();
            if rng.uniform() < 0.5 {
                -v
            } else {
                v
            }
        });
        let r = normal(x.shape(), &mut rng, 1.0);
        let analytic = relu_backward(&x, &r).unwrap();
        let num = numeric_grad(&x, 1e-2, |x| project(&relu_forward(x), &r));
        check("relu", t, &analytic, &num, TOL);
    }
}

pub fn maxpool_without_ties() {
    for t in 0..TRIALS {
        let mut rng = Rng::seed_from(600 + t);
        let (window, stride) = if t % 2 == 0 { (2, 2) } else { (3, 1) };
        let shape = [1 + t as usize % 2, 1 + t as usize % 3, 4 + 2 * (t as usize % 2), 6];
        let len: usize = shape.iter().product();
        // Distinct values 0.05 apart, shuffled, so no perturbation reorders a window.
        let mut order: Vec<usize> = (0..len).collect();
        for i in (1..len).rev() {
            order.swap(i, (rng.next() % (i as u64 + 1)) as usize);
        }
        let x = Tensor::new(shape.to_vec(), order.iter().map(|&v| v as f32 * 0.05 - 1.0).collect()).unwrap();
        let y = maxpool_forward(&x, window, stride).unwrap();
        let r = normal(y.shape(), &mut rng, 1.0);
        let analytic = maxpool_backward(&x, window, stride, &r).unwrap();
        let num = numeric_grad(&x, 1e-2, |x| project(&maxpool_forward(x, window, stride).unwrap(), &r));
        check("maxpool", t, &analytic, &num, TOL);
    }
}

pub fn softmax_cross_entropy_logit_gradient() {
    for t in 0..TRIALS {
        let mut rng = Rng::seed_from(700 + t);
        let (batch, classes) = (1 + t as usize % 5, 2 + t as usize % 9);
        let logits = normal(&[batch, classes], &mut rng, 2.0);
        let targets: Vec<usize> = (0..batch).map(|_| (rng.next() % classes as u64) as usize).collect();
        let (_, analytic) = softmax_cross_entropy(&logits, &targets).unwrap();
        let num = numeric_grad(&logits, 5e-2, |z| softmax_cross_entropy(z, &targets).unwrap().0 as f64);
        check("softmax cross-entropy", t, &analytic, &num, 1e-4);
    }
}

fn small_cnn(rng: &mut Rng) -> Network {
    let mut conv = ConvLayer::new(2, 3, 3, 1, 1, rng);
    conv.b = normal(&[3], rng, 0.3);
    Network::new(
        vec![2, 4, 4],
        vec![
            Layer::Conv(conv),
            Layer::BatchNorm(BatchNormLayer::new(3)),
            Layer::Relu,
            Layer::MaxPool { window: 2, stride: 2 },
            Layer::Flatten,
            Layer::Dense(DenseLayer::new(12, 6, rng)),
            Layer::BatchNorm(BatchNormLayer::new(6)),
            Layer::Relu,
            Layer::Dense(DenseLayer::new(6, 4, rng)),
        ],
    )
    .unwrap()
}

pub fn whole_network_parameters() {
    for t in 0..TRIALS {
        let mut rng = Rng::seed_from(800 + t);
        let mut net = small_cnn(&mut rng);
        let x = normal(&[3, 2, 4, 4], &mut rng, 1.0);
        let r = normal(&[3, 4], &mut rng, 1.0);
        let trace = net.forward_train(&x, false).unwrap();
        let grads = net.backward(&trace, r.clone(), false).unwrap();
        let params: Vec<Tensor> = net.params().into_iter().map(|(p, _)| p.clone()).collect();
        assert_eq!(grads.len(), params.len());
        let numeric: Vec<Vec<f64>> = params
            .iter()
            .enumerate()
            .map(|(pi, p)| {
                numeric_grad(p, 1e-3, |v| {
                    let mut probe = net.clone();
                    probe.params_mut()[pi].0.data_mut().copy_from_slice(v.data());
                    project(&probe.forward_train(&x, false).unwrap().output, &r)
                })
            })
            .collect();
        // A bias feeding batch norm has an identically zero gradient, so
        // each tensor is measured against the scale of the whole gradient.
        let scale = numeric.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        for (pi, (g, num)) in grads.iter().zip(&numeric).enumerate() {
            let e = rel_err_floor(g, num, scale);
            assert!(e <= TOL, "network parameter {pi}, trial {t}: relative error {e:.3e}");
        }
    }
}
