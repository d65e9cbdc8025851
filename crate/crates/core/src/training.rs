//! The minibatch training loop, the optimizer and evaluation.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::binarize::{clip_inplace, Regularizer};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fastpath::{InferenceMode, InferenceModel};
use crate::layers::softmax_cross_entropy;
use crate::network::{Grad, Layer, Network, ParamKind};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Mixed into the run seed so the binarization stream differs from the
/// weight-initialisation stream drawn from the same seed.
const BINARIZE_STREAM: u64 = 0x5EED_B1A5_0000_0001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regularizer: Regularizer,
    pub eta0: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regularizer: Regularizer::Deterministic,
            eta0: 0.001,
            momentum: 0.9,
            batch_size: 4,
            epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return Err(Error::Domain(format!("eta0 must be positive, got {}", self.eta0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Domain(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything besides the network that a resumed run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    /// One velocity per parameter tensor, in [`Network::params`] order.
    pub velocities: Vec<Tensor>,
    /// Completed epochs.
    pub epoch: usize,
    /// Learning rate for the next epoch.
    pub eta: f64,
    /// Minibatches processed so far.
    pub step: u64,
    /// Stream used for stochastic binarization.
    pub rng: Rng,
}

impl OptState {
    pub fn new(net: &Network, cfg: &TrainConfig) -> Self {
        Self {
            velocities: net.params().iter().map(|(p, _)| Tensor::zeros(p.shape())).collect(),
            epoch: 0,
            eta: cfg.eta0,
            step: 0,
            rng: Rng::seed_from(cfg.seed ^ BINARIZE_STREAM),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub learn_time_s: f64,
    pub infer_time_per_image_s: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

/// `v ← m·v + grad`, then `w ← w − eta·v`. A velocity whose step would be
/// subnormal is set to zero instead of decaying through the subnormal range.
pub fn sgd_momentum_update(
    w: &mut [f32],
    grad: &[f32],
    velocity: &mut [f32],
    eta: f32,
    momentum: f32,
) -> Result<()> {
    if w.len() != grad.len() || w.len() != velocity.len() {
        return Err(Error::dim(format!(
            "momentum update on {} weights with {} gradients and {} velocities",
            w.len(),
            grad.len(),
            velocity.len()
        )));
    }
    let floor = velocity_floor(eta);
    for ((w, &g), v) in w.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = flush(momentum.mul_add(*v, g), floor);
        *w -= eta * *v;
    }
    Ok(())
}

/// Velocities below this are zeroed; their step `eta·v` would be subnormal.
fn velocity_floor(eta: f32) -> f32 {
    f32::MIN_POSITIVE / eta
}

#[inline(always)]
fn flush(v: f32, floor: f32) -> f32 {
    if v.abs() < floor {
        0.0
    } else {
        v
    }
}

/// [`sgd_momentum_update`] (then clipping when `clip`) with the gradient
/// `d_outᵀ · input` formed one row at a time. Each gradient entry is
/// accumulated over the batch in the same order as the materialized product.
fn outer_momentum_update(
    w: &mut Tensor,
    d_out: &Tensor,
    input: &Tensor,
    velocity: &mut Tensor,
    eta: f32,
    momentum: f32,
    clip: bool,
) -> Result<()> {
    let (batch, outs) = d_out.dims2()?;
    let (batch_in, ins) = input.dims2()?;
    if batch != batch_in || w.shape() != [outs, ins] || velocity.shape() != w.shape() {
        return Err(Error::dim("factored gradient does not match the weights"));
    }
    let (d, a) = (d_out.data(), input.data());
    let floor = velocity_floor(eta);
    let mut grow = vec![0.0f32; ins];
    let rows = w.data_mut().chunks_exact_mut(ins).zip(velocity.data_mut().chunks_exact_mut(ins));
    for (o, (wrow, vrow)) in rows.enumerate() {
        grow.fill(0.0);
        for (n, arow) in a.chunks_exact(ins).enumerate() {
            let c = d[n * outs + o];
            grow.iter_mut().zip(arow).for_each(|(g, &x)| *g = c.mul_add(x, *g));
        }
        for ((w, v), &g) in wrow.iter_mut().zip(vrow.iter_mut()).zip(&grow) {
            *v = flush(momentum.mul_add(*v, g), floor);
            *w -= eta * *v;
            if clip {
                *w = w.clamp(-1.0, 1.0);
            }
        }
    }
    Ok(())
}

/// `eta_prev · 0.01^(epoch / 100)`, applied once at the end of `epoch`.
pub fn decay_learning_rate(eta_prev: f64, epoch: usize) -> f64 {
    eta_prev * 0.01f64.powf(epoch as f64 / 100.0)
}

/// One optimizer step. Returns the minibatch loss.
pub fn train_minibatch(
    net: &mut Network,
    x: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    opt: &mut OptState,
) -> Result<f32> {
    step(net, x, labels, cfg, opt).map(|(loss, _)| loss)
}

/// Returns the loss and how many samples the forward pass got right.
fn step(
    net: &mut Network,
    x: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    opt: &mut OptState,
) -> Result<(f32, usize)> {
    if labels.is_empty() {
        return Err(Error::Domain("empty minibatch".into()));
    }
    let reg = cfg.regularizer;
    let binary = reg.is_binary();
    if binary {
        net.binarize(reg, &mut opt.rng);
    }
    let trace = net.forward_train(x, binary)?;
    let (loss, d_out) = softmax_cross_entropy(&trace.output, labels)?;
    if !loss.is_finite() {
        return Err(Error::Divergence {
            epoch: opt.epoch + 1,
            step: opt.step as usize,
            loss,
        });
    }
    let correct = trace
        .output
        .argmax_rows()?
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    let grads = net.backward_factored(&trace, d_out, binary)?;

    let eta = opt.eta as f32;
    let m = cfg.momentum as f32;
    for (((p, kind), g), v) in net
        .params_mut()
        .into_iter()
        .zip(&grads)
        .zip(opt.velocities.iter_mut())
    {
        let clip = binary && kind == ParamKind::Weight;
        match g {
            Grad::Full(g) => {
                sgd_momentum_update(p.data_mut(), g.data(), v.data_mut(), eta, m)?;
                if clip {
                    clip_inplace(p.data_mut());
                }
            }
            Grad::Outer { d_out, input } => outer_momentum_update(p, d_out, input, v, eta, m, clip)?,
        }
    }
    if binary {
        net.invalidate_binary();
    }
    opt.step += 1;
    Ok((loss, correct))
}

/// A training run that stopped early, with the epochs that did finish.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub metrics: Vec<MetricsRecord>,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} complete epochs)", self.error, self.metrics.len())
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for TrainFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            metrics: Vec::new(),
        }
    }
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> std::result::Result<Vec<MetricsRecord>, TrainFailure> {
    let mut opt = OptState::new(net, cfg);
    train_with(net, &mut opt, train_set, val_set, cfg, |_, _, _| Ok(()))
}

/// Runs epochs `opt.epoch + 1 ..= cfg.epochs`, calling `on_epoch` after each
/// one with its metrics and the state at that boundary.
pub fn train_with<F>(
    net: &mut Network,
    opt: &mut OptState,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> std::result::Result<Vec<MetricsRecord>, TrainFailure>
where
    F: FnMut(&MetricsRecord, &Network, &OptState) -> Result<()>,
{
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Domain("training and validation sets must be nonempty".into()).into());
    }
    if opt.velocities.len() != net.params().len() {
        return Err(Error::State("optimizer state does not match the network".into()).into());
    }
    let mode = InferenceMode::for_regularizer(cfg.regularizer);
    let mut metrics = Vec::new();
    for epoch in opt.epoch + 1..=cfg.epochs {
        let result = run_epoch(net, opt, train_set, cfg, epoch).and_then(|(learn, train_acc)| {
            opt.eta = decay_learning_rate(opt.eta, epoch);
            opt.epoch = epoch;
            let eval = evaluate(net, val_set, mode)?;
            let record = MetricsRecord {
                epoch,
                learn_time_s: learn,
                infer_time_per_image_s: eval.time_per_image_s,
                train_acc,
                val_acc: eval.accuracy,
            };
            on_epoch(&record, net, opt)?;
            Ok(record)
        });
        match result {
            Ok(record) => metrics.push(record),
            Err(error) => return Err(TrainFailure { error, metrics }),
        }
    }
    Ok(metrics)
}

/// Order in which `epoch` visits the training set.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut Rng::seed_from(seed.wrapping_add(epoch as u64)));
    order
}

/// Returns the wall time spent and the running training accuracy.
fn run_epoch(
    net: &mut Network,
    opt: &mut OptState,
    train_set: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, f64)> {
    let start = Instant::now();
    let order = epoch_order(train_set.len(), cfg.seed, epoch);
    let needs_pairs = net.has_batchnorm();
    let mut correct = 0usize;
    let mut seen = 0usize;
    for chunk in order.chunks(cfg.batch_size) {
        // Batch statistics are undefined for a lone sample.
        if needs_pairs && chunk.len() < 2 {
            continue;
        }
        let (x, labels) = train_set.batch(chunk);
        let (_, c) = step(net, &x, &labels, cfg, opt)?;
        correct += c;
        seen += chunk.len();
    }
    let acc = if seen == 0 { 0.0 } else { correct as f64 / seen as f64 };
    Ok((start.elapsed().as_secs_f64(), acc))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub time_per_image_s: f64,
}

/// Batch-size-1 inference over every image in `ds`.
pub fn evaluate(net: &Network, ds: &Dataset, mode: InferenceMode) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty dataset".into()));
    }
    let model = InferenceModel::from_network(net, mode)?;
    let start = Instant::now();
    let mut correct = 0usize;
    for (i, &label) in ds.labels().iter().enumerate() {
        if model.predict(ds.image(i))? == label as usize {
            correct += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(Evaluation {
        accuracy: correct as f64 / ds.len() as f64,
        time_per_image_s: elapsed / ds.len() as f64,
    })
}

/// Re-estimates every batch-norm layer's running statistics as a plain
/// average over the first `samples` training images, with the forward
/// passes run in binary or full-precision mode. Used before evaluating a
/// regularized network's real-valued weights, whose activation statistics
/// differ from those seen during training.
pub fn recalibrate_batchnorm(
    net: &mut Network,
    ds: &Dataset,
    samples: usize,
    batch_size: usize,
    mode: InferenceMode,
) -> Result<()> {
    let samples = samples.min(ds.len());
    if samples < 2 || batch_size < 2 {
        return Err(Error::Domain("recalibration needs at least two samples per batch".into()));
    }
    let saved: Vec<f32> = bn_layers(net).map(|l| l.momentum).collect();
    let use_binary = mode == InferenceMode::Binary;
    if use_binary {
        net.binarize(Regularizer::Deterministic, &mut Rng::seed_from(0));
    }
    let order: Vec<usize> = (0..samples).collect();
    let mut result = Ok(());
    for (k, chunk) in order.chunks(batch_size).filter(|c| c.len() >= 2).enumerate() {
        for l in bn_layers(net) {
            l.momentum = 1.0 / (k + 1) as f32;
        }
        let (x, _) = ds.batch(chunk);
        if let Err(e) = net.forward_train(&x, use_binary) {
            result = Err(e);
            break;
        }
    }
    for (l, m) in bn_layers(net).zip(saved) {
        l.momentum = m;
    }
    net.invalidate_binary();
    result
}

fn bn_layers(net: &mut Network) -> impl Iterator<Item = &mut crate::layers::BatchNormLayer> {
    net.layers_mut().iter_mut().filter_map(|l| match l {
        Layer::BatchNorm(b) => Some(b),
        _ => None,
    })
}
