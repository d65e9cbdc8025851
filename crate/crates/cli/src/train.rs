use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use binnet::data::{load_checkpoint, save_checkpoint, Checkpoint};
use binnet::training::train_with;
use binnet::{OptState, Rng, Split};
use clap::Args;

use crate::config::{shape_str, TrainOptions};
use crate::datasets::load_split;
use crate::manifest::{append_manifest, engine_version, now, RunManifest};
use crate::metrics::{truncate_metrics, CsvAppender, METRICS_HEADER};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Args, Clone, Debug)]
pub struct TrainArgs {
    /// TOML file with any of the options below (kebab-case keys)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub options: TrainOptions,
}

pub fn run(args: TrainArgs, command_line: &str) -> Result<()> {
    let started = now();
    let file = match &args.config {
        Some(path) => TrainOptions::from_file(path)?,
        None => TrainOptions::default(),
    };
    let options = args.options.clone().or(file);
    let resume = match &args.resume {
        Some(path) => Some(load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?),
        None => None,
    };
    let plan = options.resolve(resume.as_ref())?;
    let cfg = plan.config.clone();

    let (mut net, mut opt) = match resume {
        Some(ckpt) => (ckpt.network, ckpt.opt),
        None => {
            let net = plan.dataset.build(&mut Rng::seed_from(cfg.seed));
            let opt = OptState::new(&net, &cfg);
            (net, opt)
        }
    };
    let expected = plan.dataset.input_shape();
    if net.input_shape() != expected {
        bail!(
            "checkpoint expects {} inputs but {} images are {}",
            shape_str(net.input_shape()),
            plan.dataset,
            shape_str(&expected)
        );
    }

    let mut digests = Vec::new();
    let train_set = load_split(plan.dataset, &plan.data_dir, Split::Train, plan.train_limit, &mut digests)?;
    let val_set = load_split(plan.dataset, &plan.data_dir, Split::Test, plan.val_limit, &mut digests)?;

    std::fs::create_dir_all(&plan.out).with_context(|| format!("creating {}", plan.out.display()))?;
    let metrics_path = plan.out.join(METRICS_FILE);
    let ckpt_path = plan.out.join(CHECKPOINT_FILE);
    let kept = truncate_metrics(&metrics_path, opt.epoch)?;
    let mut csv = CsvAppender::open(&metrics_path, METRICS_HEADER)?;

    println!(
        "training {} ({}) on {} images, validating on {}, epochs {}..={}",
        plan.dataset,
        cfg.regularizer,
        train_set.len(),
        val_set.len(),
        opt.epoch + 1,
        cfg.epochs
    );
    let result = train_with(&mut net, &mut opt, &train_set, &val_set, &cfg, |rec, net, opt| {
        println!(
            "epoch {:>3}  train_acc {:.4}  val_acc {:.4}  learn {:.1} s  infer {:.3e} s/image",
            rec.epoch, rec.train_acc, rec.val_acc, rec.learn_time_s, rec.infer_time_per_image_s
        );
        csv.append(rec).map_err(|e| std::io::Error::other(format!("{e:#}")))?;
        save_checkpoint(
            &ckpt_path,
            &Checkpoint {
                config: cfg.clone(),
                network: net.clone(),
                opt: opt.clone(),
            },
        )
    });

    let (status, outcome) = match result {
        Ok(_) => {
            // Also covers runs with no epochs left to train.
            save_checkpoint(
                &ckpt_path,
                &Checkpoint {
                    config: cfg.clone(),
                    network: net,
                    opt,
                },
            )?;
            ("ok", Ok(()))
        }
        Err(failure) => {
            let status = match failure.error {
                binnet::Error::Divergence { .. } => "diverged",
                _ => "failed",
            };
            (status, Err(anyhow::Error::new(failure)))
        }
    };
    let rows = (csv.rows() > kept).then(|| [kept + 1, csv.rows()]);
    append_manifest(
        &plan.out.join(MANIFEST_FILE),
        RunManifest {
            command: command_line.to_string(),
            config: serde_json::to_value(&plan)?,
            datasets: digests,
            started,
            finished: now(),
            engine_version: engine_version(),
            status: status.into(),
            rows,
        },
        kept,
    )?;
    outcome
}
