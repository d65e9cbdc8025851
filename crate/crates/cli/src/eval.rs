use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use binnet::data::load_checkpoint;
use binnet::training::{evaluate, recalibrate_batchnorm, Evaluation};
use binnet::{Dataset, InferenceMode, Network, Preset, Split};
use clap::Args;

use crate::config::{default_data_dir, preset_for_shape, shape_str};
use crate::datasets::load_split;

/// Batch size for batch-norm recalibration passes.
const RECALIBRATION_BATCH: usize = 100;

#[derive(Args, Clone, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// mnist or cifar10 (default: whichever matches the checkpoint)
    #[arg(long)]
    pub dataset: Option<Preset>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Use only the first N validation images (0 = all)
    #[arg(long, default_value_t = 0)]
    pub val_limit: usize,
    /// Run binary and full-precision inference and print the difference
    #[arg(long)]
    pub compare: bool,
    /// Training images used to re-estimate batch-norm statistics for the
    /// inference mode the network was not trained in (0 = keep stored)
    #[arg(long, default_value_t = 10_000)]
    pub recalibrate: usize,
}

pub fn run(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt).with_context(|| format!("loading {}", args.ckpt.display()))?;
    let dataset = match args.dataset {
        Some(d) => d,
        None => preset_for_shape(ckpt.network.input_shape())?,
    };
    let expected = dataset.input_shape();
    if ckpt.network.input_shape() != expected {
        bail!(
            "checkpoint expects {} inputs but {} images are {}",
            shape_str(ckpt.network.input_shape()),
            dataset,
            shape_str(&expected)
        );
    }
    let dir = args.data_dir.clone().unwrap_or_else(|| default_data_dir(dataset));
    let mut digests = Vec::new();
    let val = load_split(dataset, &dir, Split::Test, args.val_limit, &mut digests)?;
    let trained = InferenceMode::for_regularizer(ckpt.config.regularizer);

    let own = evaluate(&ckpt.network, &val, trained)?;
    report(trained, &own, val.len(), None);
    if !args.compare {
        return Ok(());
    }

    let other = match trained {
        InferenceMode::Binary => InferenceMode::FullPrecision,
        InferenceMode::FullPrecision => InferenceMode::Binary,
    };
    let mut net = ckpt.network.clone();
    let recalibrated = if args.recalibrate > 0 && net.has_batchnorm() {
        let train = load_split(dataset, &dir, Split::Train, args.recalibrate, &mut digests)?;
        recalibrate(&mut net, &train, args.recalibrate, other)?;
        Some(args.recalibrate.min(train.len()))
    } else {
        None
    };
    let cross = evaluate(&net, &val, other)?;
    report(other, &cross, val.len(), recalibrated);
    let (binary, full) = match trained {
        InferenceMode::Binary => (own.accuracy, cross.accuracy),
        InferenceMode::FullPrecision => (cross.accuracy, own.accuracy),
    };
    println!("delta binary - full_precision: {:+.4}", binary - full);
    Ok(())
}

fn recalibrate(net: &mut Network, train: &Dataset, samples: usize, mode: InferenceMode) -> Result<()> {
    recalibrate_batchnorm(net, train, samples, RECALIBRATION_BATCH, mode)?;
    Ok(())
}

fn mode_name(mode: InferenceMode) -> &'static str {
    match mode {
        InferenceMode::Binary => "binary",
        InferenceMode::FullPrecision => "full_precision",
    }
}

fn report(mode: InferenceMode, e: &Evaluation, images: usize, recalibrated: Option<usize>) {
    let note = match recalibrated {
        Some(n) => format!(", batch norm re-estimated on {n} training images"),
        None => String::new(),
    };
    println!(
        "{} accuracy {} ({} images{note}), {:.3e} s/image",
        mode_name(mode),
        e.accuracy,
        images,
        e.time_per_image_s
    );
}
