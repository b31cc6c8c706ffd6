//! Pixel-intensity histograms and real-versus-generated similarity scores.

pub mod histogram;
pub mod report;

pub use histogram::{
    js_divergence, overlap_coefficient, smooth_density, wasserstein1, Histogram, DEFAULT_BINS,
    PLOT_BANDWIDTH_BINS,
};
pub use report::{compare, compare_images, DistributionReport};
