//! The two network shapes the command line trains.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::layers::{BatchNormLayer, ConvLayer, DenseLayer};
use crate::network::{Layer, Network};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Permutation-invariant 784-1024-1024-10 MLP.
    Mnist,
    /// Scaled-down VGG-style CNN for 32x32 RGB input.
    Cifar10,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Mnist => "mnist",
            Preset::Cifar10 => "cifar10",
        }
    }

    pub fn input_shape(self) -> [usize; 3] {
        match self {
            Preset::Mnist => [1, 28, 28],
            Preset::Cifar10 => [3, 32, 32],
        }
    }

    pub fn build(self, rng: &mut Rng) -> Network {
        match self {
            Preset::Mnist => mnist_fc(rng),
            Preset::Cifar10 => cifar_vgg(rng),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(Preset::Mnist),
            "cifar10" | "cifar-10" => Ok(Preset::Cifar10),
            other => Err(Error::Domain(format!(
                "unknown dataset {other:?} (expected mnist or cifar10)"
            ))),
        }
    }
}

/// Flatten, then dense layers of the given widths. Every hidden dense layer
/// is followed by batch norm and ReLU; the last one feeds the softmax.
pub fn mlp(input_shape: [usize; 3], widths: &[usize], rng: &mut Rng) -> Network {
    let mut layers = vec![Layer::Flatten];
    let mut fan_in: usize = input_shape.iter().product();
    for (i, &width) in widths.iter().enumerate() {
        layers.push(Layer::Dense(DenseLayer::new(fan_in, width, rng)));
        if i + 1 < widths.len() {
            layers.push(Layer::BatchNorm(BatchNormLayer::new(width)));
            layers.push(Layer::Relu);
        }
        fan_in = width;
    }
    Network::new(input_shape.to_vec(), layers).expect("mlp shapes are consistent")
}

/// 784-1024-1024-10 with batch norm after each hidden layer.
pub fn mnist_fc(rng: &mut Rng) -> Network {
    mlp(Preset::Mnist.input_shape(), &[1024, 1024, 10], rng)
}

/// conv64 x2, pool, conv128 x2, pool, conv256 x2, pool, FC256, FC10. Every
/// conv and the hidden FC layer are followed by batch norm and ReLU.
pub fn cifar_vgg(rng: &mut Rng) -> Network {
    vgg_style(Preset::Cifar10.input_shape(), &[64, 128, 256], 256, rng)
}

/// VGG-style stack: two 3x3 convs per block, 2x2 max-pool after each block.
pub fn vgg_style(input_shape: [usize; 3], block_channels: &[usize], hidden: usize, rng: &mut Rng) -> Network {
    let mut layers = Vec::new();
    let [mut channels, mut h, mut w] = input_shape;
    for &out in block_channels {
        for _ in 0..2 {
            layers.push(Layer::Conv(ConvLayer::new(channels, out, 3, 1, 1, rng)));
            layers.push(Layer::BatchNorm(BatchNormLayer::new(out)));
            layers.push(Layer::Relu);
            channels = out;
        }
        layers.push(Layer::MaxPool { window: 2, stride: 2 });
        h /= 2;
        w /= 2;
    }
    layers.push(Layer::Flatten);
    layers.push(Layer::Dense(DenseLayer::new(channels * h * w, hidden, rng)));
    layers.push(Layer::BatchNorm(BatchNormLayer::new(hidden)));
    layers.push(Layer::Relu);
    layers.push(Layer::Dense(DenseLayer::new(hidden, 10, rng)));
    Network::new(input_shape.to_vec(), layers).expect("vgg shapes are consistent")
}
