//! Default generator and discriminator stacks.
//!
//! Generator: latent → dense → `[C0, 8, 8]` → stride-2 transposed-conv stages
//! (k=4, pad=1) with relu, halving channels each stage down to 16, then a final
//! stage to one channel with tanh. Discriminator mirrors it: stride-2 conv stages
//! from one channel up (16, 32, ...) with leaky relu(0.2), flatten, dense → 1, sigmoid.
//!
//! The stage count is `log2(image_size) − 3`, so a 128×128 model has four stages
//! (128→64→32→16→1 channels) and a 32×32 model has two (32→16→1).

use super::layer::{Activation, Layer};
use super::network::Network;
use crate::error::{Error, Result};

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;
pub const SEED_SPATIAL: usize = 8;
pub const BASE_CHANNELS: usize = 16;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_LATENT_DIM: usize = 64;
pub const DEFAULT_IMAGE_SIZE: usize = 128;

/// Parameter count of `generator(64, 128)`.
pub const DEFAULT_GENERATOR_PARAMS: usize = 704_881;
/// Parameter count of `discriminator(128)`.
pub const DEFAULT_DISCRIMINATOR_PARAMS: usize = 180_721;

/// Number of stride-2 stages between an 8×8 seed and `image_size`.
pub fn stage_count(image_size: usize) -> Result<usize> {
    if image_size < 16 || !image_size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "image size {image_size} must be a power of two >= 16"
        )));
    }
    Ok(image_size.trailing_zeros() as usize - 3)
}

fn widths(stages: usize) -> Vec<usize> {
    // Widest first: [16·2^(stages−1), ..., 32, 16]
    (0..stages).rev().map(|i| BASE_CHANNELS << i).collect()
}

pub fn generator(latent_dim: usize, image_size: usize) -> Result<Network> {
    if latent_dim == 0 {
        return Err(Error::InvalidArgument("latent_dim must be >= 1".into()));
    }
    let stages = stage_count(image_size)?;
    let mut channels = widths(stages);
    channels.push(1);
    let seed_len = channels[0] * SEED_SPATIAL * SEED_SPATIAL;
    let mut layers = vec![
        Layer::dense(latent_dim, seed_len)?,
        Layer::Reshape {
            shape: vec![channels[0], SEED_SPATIAL, SEED_SPATIAL],
        },
        Layer::Activation(Activation::Relu),
    ];
    for (i, pair) in channels.windows(2).enumerate() {
        layers.push(Layer::conv_transpose(pair[0], pair[1], KERNEL, STRIDE, PAD)?);
        let last = i + 1 == stages;
        layers.push(Layer::Activation(if last { Activation::Tanh } else { Activation::Relu }));
    }
    Network::new("generator", vec![latent_dim], layers)
}

pub fn discriminator(image_size: usize) -> Result<Network> {
    let stages = stage_count(image_size)?;
    let mut channels = vec![1];
    channels.extend(widths(stages).into_iter().rev());
    let mut layers = Vec::new();
    for pair in channels.windows(2) {
        layers.push(Layer::conv(pair[0], pair[1], KERNEL, STRIDE, PAD)?);
        layers.push(Layer::Activation(Activation::LeakyRelu(LEAKY_SLOPE)));
    }
    let flat = channels[stages] * SEED_SPATIAL * SEED_SPATIAL;
    layers.push(Layer::Flatten);
    layers.push(Layer::dense(flat, 1)?);
    layers.push(Layer::Activation(Activation::Sigmoid));
    Network::new("discriminator", vec![1, image_size, image_size], layers)
}
