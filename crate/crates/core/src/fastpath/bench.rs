//! Latency microbenchmarks for the full-precision and packed kernels.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::conv::{binary_conv_forward, PackedConv};
use super::dense::{binary_dense_forward, PackedDense};
use crate::error::{Error, Result};
use crate::packed::PackedBinaryMatrix;
use crate::rng::Rng;
use crate::tensor::{conv2d, matmul_nt, Tensor};

pub const MIN_REPS: usize = 30;
pub const WARMUP_REPS: usize = 5;
/// Spatial extent of the benchmark feature map; `size` sets the channels.
pub const CONV_SPATIAL: usize = 16;
/// Largest weight tensor a benchmark will allocate, in elements.
const MAX_WEIGHTS: usize = 1 << 26;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    FpDense,
    BinDense,
    FpConv,
    BinConv,
}

impl Kernel {
    pub const ALL: [Kernel; 4] = [Kernel::FpDense, Kernel::BinDense, Kernel::FpConv, Kernel::BinConv];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::FpDense => "fp_dense",
            Kernel::BinDense => "bin_dense",
            Kernel::FpConv => "fp_conv",
            Kernel::BinConv => "bin_conv",
        }
    }

    /// The full-precision kernel a binary one is compared against.
    pub fn baseline(self) -> Option<Kernel> {
        match self {
            Kernel::BinDense => Some(Kernel::FpDense),
            Kernel::BinConv => Some(Kernel::FpConv),
            _ => None,
        }
    }

    /// What `size` means for this kernel.
    pub fn describe(self, size: usize) -> String {
        match self {
            Kernel::FpDense | Kernel::BinDense => format!("{size}x{size} weights, batch 1"),
            Kernel::FpConv | Kernel::BinConv => format!(
                "{size}x{size}x3x3 kernels on 1x{size}x{CONV_SPATIAL}x{CONV_SPATIAL}, pad 1"
            ),
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kernel::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Kernel::ALL.iter().map(|k| k.name()).collect();
                Error::Domain(format!("unknown kernel {s:?}; valid kernels: {}", names.join(", ")))
            })
    }
}

/// One benchmark row; field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub kernel: Kernel,
    pub size: usize,
    pub reps: usize,
    pub median_ns: u64,
    pub p10_ns: u64,
    pub p90_ns: u64,
    /// `Σ |y|` over the last output, so the work cannot be optimised away
    /// and kernels on the same problem can be cross-checked.
    pub checksum: f64,
}

/// Nearest-rank percentile of an ascending sample, `q` in `(0, 1]`.
pub fn percentile(sorted: &[u64], q: f64) -> u64 {
    assert!(!sorted.is_empty());
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// The benchmark inputs for `size`: a random `±1` weight tensor and a
/// random activation tensor in `[-1, 1)`, identical for the binary and
/// full-precision variants.
fn problem(kernel: Kernel, size: usize) -> Result<(Tensor, Tensor)> {
    if size == 0 {
        return Err(Error::dim("benchmark size must be positive"));
    }
    let conv = matches!(kernel, Kernel::FpConv | Kernel::BinConv);
    let weights = if conv { size * size * 9 } else { size * size };
    if weights > MAX_WEIGHTS {
        return Err(Error::Domain(format!(
            "size {size} needs {weights} weights, over the {MAX_WEIGHTS} limit"
        )));
    }
    let mut rng = Rng::seed_from(size as u64);
    let (w_shape, x_shape) = if conv {
        (vec![size, size, 3, 3], vec![1, size, CONV_SPATIAL, CONV_SPATIAL])
    } else {
        (vec![size, size], vec![1, size])
    };
    let w = Tensor::from_fn(&w_shape, |_| if rng.next() >> 63 == 1 { 1.0 } else { -1.0 });
    let x = Tensor::from_fn(&x_shape, |_| rng.uniform() * 2.0 - 1.0);
    Ok((w, x))
}

/// Times `reps` runs of `kernel` at `size` after [`WARMUP_REPS`] untimed
/// runs, on a single worker thread.
pub fn run_benchmark(kernel: Kernel, size: usize, reps: usize) -> Result<BenchResult> {
    if reps < MIN_REPS {
        return Err(Error::Domain(format!("reps must be at least {MIN_REPS}, got {reps}")));
    }
    let (w, x) = problem(kernel, size)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::State(format!("cannot start benchmark thread: {e}")))?;
    pool.install(|| -> Result<BenchResult> {
        let run: Box<dyn Fn() -> Result<Tensor>> = match kernel {
            Kernel::FpDense => Box::new(|| matmul_nt(&x, &w)),
            Kernel::BinDense => {
                let layer = PackedDense::new(
                    PackedBinaryMatrix::pack(&w, size, size)?,
                    vec![0.0; size],
                )?;
                Box::new(move || binary_dense_forward(&layer, &x))
            }
            Kernel::FpConv => Box::new(|| conv2d(&x, &w, 1, 1)),
            Kernel::BinConv => {
                let packed = PackedConv::pack(&w, &Tensor::zeros(&[size]))?;
                Box::new(move || binary_conv_forward(&packed, &x, 1, 1))
            }
        };
        for _ in 0..WARMUP_REPS {
            black_box(run()?);
        }
        let mut times = Vec::with_capacity(reps);
        let mut last = None;
        for _ in 0..reps {
            let start = Instant::now();
            let out = black_box(run()?);
            times.push(start.elapsed().as_nanos() as u64);
            last = Some(out);
        }
        times.sort_unstable();
        let out = last.expect("at least one rep");
        Ok(BenchResult {
            kernel,
            size,
            reps,
            median_ns: percentile(&times, 0.5),
            p10_ns: percentile(&times, 0.1),
            p90_ns: percentile(&times, 0.9),
            checksum: out.data().iter().map(|&v| v.abs() as f64).sum(),
        })
    })
}
