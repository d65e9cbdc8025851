//! Checkpoint file: the full training state in a little-endian binary layout.
//!
//! ```text
//! "BNNC"  version:u8
//! config  regularizer:u8 eta0:f64 momentum:f64 batch_size:u64 epochs:u64 seed:u64
//! input   ndim:u8 dims:u32*
//! layers  count:u32, then per layer kind:u8 and its fields
//! opt     epoch:u64 eta:f64 step:u64 rng:u64*4 count:u32 velocities
//! ```
//!
//! Tensors are `ndim:u8 dims:u32* values:f32*`. Layer kinds: 0 dense (w, b),
//! 1 conv (stride:u32 pad:u32 kernels b), 2 batch norm (eps:f32 momentum:f32
//! gamma beta running_mean running_var), 3 relu, 4 max-pool (window:u32
//! stride:u32), 5 flatten.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::binarize::Regularizer;
use crate::error::{Error, Result};
use crate::layers::{BatchNormLayer, ConvLayer, DenseLayer};
use crate::network::{Layer, Network};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::training::{OptState, TrainConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BNNC";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub network: Network,
    pub opt: OptState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn dims(&mut self, dims: &[usize]) {
        self.u8(dims.len() as u8);
        dims.iter().for_each(|&d| self.u32(d));
    }
    fn tensor(&mut self, t: &Tensor) {
        self.dims(t.shape());
        self.0.reserve(t.len() * 4);
        t.data().iter().for_each(|&v| self.f32(v));
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&CHECKPOINT_MAGIC);
    w.u8(CHECKPOINT_VERSION);

    let c = &ckpt.config;
    w.u8(c.regularizer.code());
    w.f64(c.eta0);
    w.f64(c.momentum);
    w.u64(c.batch_size as u64);
    w.u64(c.epochs as u64);
    w.u64(c.seed);

    w.dims(ckpt.network.input_shape());
    let layers = ckpt.network.layers();
    w.u32(layers.len());
    for layer in layers {
        match layer {
            Layer::Dense(l) => {
                w.u8(0);
                w.tensor(&l.w);
                w.tensor(&l.b);
            }
            Layer::Conv(l) => {
                w.u8(1);
                w.u32(l.stride);
                w.u32(l.pad);
                w.tensor(&l.kernels);
                w.tensor(&l.b);
            }
            Layer::BatchNorm(l) => {
                w.u8(2);
                w.f32(l.eps);
                w.f32(l.momentum);
                for t in [&l.gamma, &l.beta, &l.running_mean, &l.running_var] {
                    w.tensor(t);
                }
            }
            Layer::Relu => w.u8(3),
            Layer::MaxPool { window, stride } => {
                w.u8(4);
                w.u32(*window);
                w.u32(*stride);
            }
            Layer::Flatten => w.u8(5),
        }
    }

    let o = &ckpt.opt;
    w.u64(o.epoch as u64);
    w.f64(o.eta);
    w.u64(o.step);
    o.rng.state().iter().for_each(|&s| w.u64(s));
    w.u32(o.velocities.len());
    o.velocities.iter().for_each(|t| w.tensor(t));
    w.0
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!("file ends inside {what} starting at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
    fn dims(&mut self, what: &str) -> Result<Vec<usize>> {
        let at = self.pos;
        let n = self.u8(what)? as usize;
        let dims = (0..n).map(|_| self.u32(what)).collect::<Result<Vec<_>>>()?;
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::format(at as u64, format!("invalid {what} shape {dims:?}")));
        }
        Ok(dims)
    }
    fn tensor(&mut self, what: &str) -> Result<Tensor> {
        let dims = self.dims(what)?;
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&l| l <= self.bytes.len() / 4)
            .ok_or_else(|| Error::format(self.pos as u64, format!("{what} too large")))?;
        let raw = self.take(len * 4, what)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Tensor::new(dims, data)
    }
}

/// Wraps a layer-construction error with the offset of the layer record.
fn at(offset: usize) -> impl Fn(Error) -> Error {
    move |e| Error::format(offset as u64, e.to_string())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if let Some(i) = (0..4).find(|&i| magic[i] != CHECKPOINT_MAGIC[i]) {
        return Err(Error::format(i as u64, "not a checkpoint (bad magic)"));
    }
    let version = r.u8("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"),
        ));
    }

    let reg_at = r.pos;
    let regularizer = Regularizer::from_code(r.u8("regularizer")?)
        .ok_or_else(|| Error::format(reg_at as u64, "unknown regularizer code"))?;
    let config = TrainConfig {
        regularizer,
        eta0: r.f64("eta0")?,
        momentum: r.f64("momentum")?,
        batch_size: r.u64("batch size")? as usize,
        epochs: r.u64("epochs")? as usize,
        seed: r.u64("seed")?,
    };

    let input_shape = r.dims("input shape")?;
    let count = r.u32("layer count")?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let start = r.pos;
        let layer = match r.u8("layer kind")? {
            0 => {
                let w = r.tensor("dense weights")?;
                let b = r.tensor("dense bias")?;
                Layer::Dense(DenseLayer::from_params(w, b).map_err(at(start))?)
            }
            1 => {
                let stride = r.u32("conv stride")?;
                let pad = r.u32("conv padding")?;
                let k = r.tensor("conv kernels")?;
                let b = r.tensor("conv bias")?;
                Layer::Conv(ConvLayer::from_params(k, b, stride, pad).map_err(at(start))?)
            }
            2 => {
                let eps = r.f32("batch-norm eps")?;
                let momentum = r.f32("batch-norm momentum")?;
                let gamma = r.tensor("batch-norm gamma")?;
                let beta = r.tensor("batch-norm beta")?;
                let running_mean = r.tensor("batch-norm mean")?;
                let running_var = r.tensor("batch-norm variance")?;
                let c = gamma.len();
                if gamma.ndim() != 1
                    || [&beta, &running_mean, &running_var].iter().any(|t| t.shape() != [c])
                {
                    return Err(Error::format(start as u64, "batch-norm tensors disagree in shape"));
                }
                Layer::BatchNorm(BatchNormLayer {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    eps,
                    momentum,
                })
            }
            3 => Layer::Relu,
            4 => Layer::MaxPool {
                window: r.u32("pool window")?,
                stride: r.u32("pool stride")?,
            },
            5 => Layer::Flatten,
            k => return Err(Error::format(start as u64, format!("unknown layer kind {k}"))),
        };
        layers.push(layer);
    }
    let net_end = r.pos;
    let network = Network::new(input_shape, layers).map_err(at(net_end))?;

    let epoch = r.u64("epoch")? as usize;
    let eta = r.f64("learning rate")?;
    let step = r.u64("step")?;
    let rng_at = r.pos;
    let mut state = [0u64; 4];
    for s in &mut state {
        *s = r.u64("rng state")?;
    }
    if state == [0; 4] {
        return Err(Error::format(rng_at as u64, "all-zero rng state"));
    }
    let vel_at = r.pos;
    let n = r.u32("velocity count")?;
    let velocities = (0..n)
        .map(|_| r.tensor("velocity"))
        .collect::<Result<Vec<_>>>()?;
    let params = network.params();
    if velocities.len() != params.len()
        || velocities.iter().zip(&params).any(|(v, (p, _))| v.shape() != p.shape())
    {
        return Err(Error::format(vel_at as u64, "velocities do not match the parameters"));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("{} unexpected trailing bytes", bytes.len() - r.pos),
        ));
    }
    Ok(Checkpoint {
        config,
        network,
        opt: OptState {
            velocities,
            epoch,
            eta,
            step,
            rng: Rng::from_state(state),
        },
    })
}

/// Writes to a sibling temporary file and renames it over `path`, so a
/// failed write never leaves a partial checkpoint behind.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt);
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::Io(e)
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&super::read_file(path)?)
}
