use std::path::PathBuf;

use anyhow::Result;
use binnet::fastpath::{run_benchmark, BenchResult, Kernel, MIN_REPS};
use clap::Args;
use serde_json::json;

use crate::manifest::{append_manifest, engine_version, now, RunManifest};
use crate::metrics::{CsvAppender, BENCH_HEADER};

pub const DEFAULT_DENSE_SIZE: usize = 1024;
pub const DEFAULT_CONV_SIZE: usize = 128;

#[derive(Args, Clone, Debug)]
pub struct BenchArgs {
    /// Comma-separated kernels: fp_dense, bin_dense, fp_conv, bin_conv
    #[arg(long, value_delimiter = ',', required = true)]
    pub kernel: Vec<String>,
    /// Problem sizes (default 1024 for dense kernels, 128 channels for conv)
    #[arg(long, value_delimiter = ',')]
    pub size: Vec<usize>,
    #[arg(long, default_value_t = MIN_REPS)]
    pub reps: usize,
    /// Append rows to this CSV; its manifest goes to PATH.manifest.json
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn run(args: BenchArgs, command_line: &str) -> Result<()> {
    let started = now();
    let kernels = args.kernel.iter().map(|k| k.parse::<Kernel>()).collect::<Result<Vec<_>, _>>()?;
    if args.reps < MIN_REPS {
        anyhow::bail!("--reps must be at least {MIN_REPS}, got {}", args.reps);
    }
    let mut appender = match &args.csv {
        Some(path) => Some(CsvAppender::open(path, BENCH_HEADER)?),
        None => None,
    };
    let kept = appender.as_ref().map_or(0, CsvAppender::rows);

    let mut results: Vec<BenchResult> = Vec::new();
    for &kernel in &kernels {
        let sizes = if args.size.is_empty() {
            vec![default_size(kernel)]
        } else {
            args.size.clone()
        };
        for size in sizes {
            let r = run_benchmark(kernel, size, args.reps)?;
            println!(
                "{:<9} {:>5} ({})  median {} ns  p10 {} ns  p90 {} ns",
                r.kernel.name(),
                r.size,
                kernel.describe(size),
                r.median_ns,
                r.p10_ns,
                r.p90_ns
            );
            if let Some(a) = appender.as_mut() {
                a.append(&r)?;
            }
            results.push(r);
        }
    }
    for r in &results {
        let Some(base) = r.kernel.baseline() else { continue };
        if let Some(b) = results.iter().find(|b| b.kernel == base && b.size == r.size) {
            let ratio = r.median_ns as f64 / b.median_ns as f64;
            println!(
                "{} / {} at {}: median ratio {ratio:.3}, speedup {:.2}x",
                r.kernel,
                base,
                r.size,
                1.0 / ratio
            );
        }
    }

    if let (Some(path), Some(a)) = (&args.csv, &appender) {
        let mut name = path.clone().into_os_string();
        name.push(".manifest.json");
        append_manifest(
            &PathBuf::from(name),
            RunManifest {
                command: command_line.to_string(),
                config: json!({
                    "kernels": kernels.iter().map(|k| k.name()).collect::<Vec<_>>(),
                    "sizes": args.size,
                    "reps": args.reps,
                }),
                datasets: Vec::new(),
                started,
                finished: now(),
                engine_version: engine_version(),
                status: "ok".into(),
                rows: (a.rows() > kept).then(|| [kept + 1, a.rows()]),
            },
            kept,
        )?;
    }
    Ok(())
}

pub fn default_size(kernel: Kernel) -> usize {
    match kernel {
        Kernel::FpDense | Kernel::BinDense => DEFAULT_DENSE_SIZE,
        Kernel::FpConv | Kernel::BinConv => DEFAULT_CONV_SIZE,
    }
}
