//! Image ingestion, preprocessing, batching and the synthetic blob dataset.

pub mod dataset;
pub mod pnm;
pub mod preprocess;
pub mod synth;

pub use dataset::{batches, real_sample_grid, tile_grid, ImageDataset, ImageGrid};
pub use pnm::RawImage;
pub use preprocess::{denormalize_value, normalize, normalize_value, preprocess, resize};
pub use synth::{synth_dataset, ImbalanceSpec};
