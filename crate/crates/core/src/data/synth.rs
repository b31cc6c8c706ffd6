//! Seeded blob images standing in for scans: smooth dim backgrounds, with one bright
//! compact lesion on positive-class images.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::dataset::ImageDataset;
use super::pnm::RawImage;
use super::preprocess::normalize;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

pub const BACKGROUND_PEAK: (f64, f64) = (60.0, 120.0);
pub const LESION_PEAK: (f64, f64) = (200.0, 255.0);

/// Dataset size and positive-class fraction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImbalanceSpec {
    pub total: usize,
    pub prevalence: f64,
}

impl ImbalanceSpec {
    pub fn new(total: usize, prevalence: f64) -> Result<Self> {
        if total == 0 {
            return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
        }
        if !(prevalence > 0.0 && prevalence <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "prevalence {prevalence} must be in (0, 1]"
            )));
        }
        Ok(Self { total, prevalence })
    }

    pub fn positives(&self) -> usize {
        (self.total as f64 * self.prevalence).round() as usize
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
    weight: f64,
}

impl Blob {
    fn at(&self, x: usize, y: usize) -> f64 {
        let (dx, dy) = (x as f64 - self.cx, y as f64 - self.cy);
        self.weight * (-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

fn background(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let s = size as f64;
    let count = rng.gen_range(2..=4);
    let blobs: Vec<Blob> = (0..count)
        .map(|_| Blob {
            cx: rng.gen_range(0.0..s),
            cy: rng.gen_range(0.0..s),
            sigma: rng.gen_range(s / 6.0..=s / 3.0),
            weight: rng.gen_range(0.5..=1.0),
        })
        .collect();
    let mut field: Vec<f64> = (0..size * size)
        .map(|i| blobs.iter().map(|b| b.at(i % size, i / size)).sum())
        .collect();
    let peak = rng.gen_range(BACKGROUND_PEAK.0..=BACKGROUND_PEAK.1);
    let max = field.iter().cloned().fold(0.0, f64::max);
    for v in &mut field {
        *v *= peak / max;
    }
    field
}

/// Renders one image. Positive images gain a lesion centred on an integer pixel so the
/// peak value is attained exactly at the centre.
pub fn synth_image(rng: &mut ChaCha8Rng, size: usize, positive: bool) -> RawImage {
    let mut field = background(rng, size);
    if positive {
        let s = size as f64;
        let lo = size / 4;
        let hi = (3 * size / 4).max(lo + 1);
        let lesion = Blob {
            cx: rng.gen_range(lo..hi) as f64,
            cy: rng.gen_range(lo..hi) as f64,
            sigma: rng.gen_range(s / 16.0..=s / 8.0),
            weight: rng.gen_range(LESION_PEAK.0..=LESION_PEAK.1),
        };
        for (i, v) in field.iter_mut().enumerate() {
            *v += lesion.at(i % size, i / size);
        }
    }
    let pixels = field.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    RawImage {
        width: size,
        height: size,
        pixels,
    }
}

/// Which indices are positive: the first `positives` entries of a seeded permutation.
pub fn positive_mask(spec: &ImbalanceSpec, seed: u64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..spec.total).collect();
    order.shuffle(&mut stream_rng(seed, Stream::SynthLabels, 0));
    let mut mask = vec![false; spec.total];
    for &i in &order[..spec.positives()] {
        mask[i] = true;
    }
    mask
}

/// Raw u8 images with their class flags; image `i` depends only on `(seed, i)` and its flag.
pub fn synth_raw(spec: &ImbalanceSpec, seed: u64, size: usize) -> Vec<(RawImage, bool)> {
    use rayon::prelude::*;
    positive_mask(spec, seed)
        .into_par_iter()
        .enumerate()
        .map(|(i, positive)| {
            let mut rng = stream_rng(seed, Stream::Synth, i as u64);
            (synth_image(&mut rng, size, positive), positive)
        })
        .collect()
}

pub fn synth_dataset(spec: &ImbalanceSpec, seed: u64, size: usize) -> Result<ImageDataset> {
    if size == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    let raw = synth_raw(spec, seed, size);
    let tensors: Vec<Tensor<f32>> = raw.iter().map(|(img, _)| normalize(img)).collect();
    ImageDataset::new(
        Tensor::stack(&tensors)?,
        (0..raw.len()).map(|i| format!("synth:{seed}:{i}")).collect(),
        raw.iter().map(|(_, p)| Some(*p)).collect(),
    )
}
