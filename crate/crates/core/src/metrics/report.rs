use serde::Serialize;

use super::histogram::{
    js_divergence, overlap_coefficient, smooth_density, wasserstein1, Histogram, PLOT_BANDWIDTH_BINS,
};
use crate::data::ImageDataset;
use crate::error::Result;
use crate::gan::generate;
use crate::nn::Network;
use crate::tensor::Tensor;

/// Histograms of two image sets on a shared grid with their similarity scores.
/// Field order is the serialized key order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistributionReport {
    pub bins: usize,
    pub real_count: usize,
    pub generated_count: usize,
    pub overlap: f64,
    pub js_divergence: f64,
    pub wasserstein1: f64,
    pub bin_centers: Vec<f64>,
    pub real_density: Vec<f64>,
    pub generated_density: Vec<f64>,
    pub real_smoothed: Vec<f64>,
    pub generated_smoothed: Vec<f64>,
}

impl DistributionReport {
    /// `bin_center,real,generated` rows of unsmoothed densities.
    pub fn densities_csv(&self) -> String {
        let mut out = String::from("bin_center,real,generated\n");
        for i in 0..self.bins {
            out.push_str(&format!(
                "{},{},{}\n",
                self.bin_centers[i], self.real_density[i], self.generated_density[i]
            ));
        }
        out
    }
}

/// Compares two `[N, ...]` image tensors; metrics use the unsmoothed histograms.
pub fn compare_images(real: &Tensor<f32>, generated: &Tensor<f32>, bins: usize) -> Result<DistributionReport> {
    let hr = Histogram::from_values(real.data(), bins)?;
    let hg = Histogram::from_values(generated.data(), bins)?;
    let (p, q) = (hr.densities(), hg.densities());
    Ok(DistributionReport {
        bins,
        real_count: real.shape()[0],
        generated_count: generated.shape()[0],
        overlap: overlap_coefficient(p, q)?,
        js_divergence: js_divergence(p, q)?,
        wasserstein1: wasserstein1(p, q)?,
        bin_centers: hr.centers(),
        real_density: p.to_vec(),
        generated_density: q.to_vec(),
        real_smoothed: smooth_density(&hr, PLOT_BANDWIDTH_BINS)?,
        generated_smoothed: smooth_density(&hg, PLOT_BANDWIDTH_BINS)?,
    })
}

/// Samples `n_samples` images from `generator` and compares them with the whole dataset.
pub fn compare(
    real: &ImageDataset,
    generator: &Network,
    n_samples: usize,
    seed: u64,
    bins: usize,
) -> Result<DistributionReport> {
    let generated = generate(generator, n_samples, seed)?;
    compare_images(real.images(), &generated, bins)
}
