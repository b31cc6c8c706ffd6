use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::preprocess::{denormalize_value, load_images, preprocess};
use super::pnm::RawImage;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

/// Normalized grayscale images `[N, 1, S, S]` with provenance and optional class flags.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    images: Tensor<f32>,
    sources: Vec<String>,
    labels: Vec<Option<bool>>,
}

/// JSON sidecar stored next to the `GTD1` image blob.
#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    paths: Vec<String>,
    labels: Vec<Option<bool>>,
    image_size: usize,
}

impl ImageDataset {
    pub fn new(images: Tensor<f32>, sources: Vec<String>, labels: Vec<Option<bool>>) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != s[3] {
            return Err(Error::InvalidShape {
                op: "dataset",
                shape: s.to_vec(),
                reason: "expected [N, 1, S, S]".into(),
            });
        }
        if sources.len() != s[0] || labels.len() != s[0] {
            return Err(Error::InvalidArgument(format!(
                "{} images but {} sources and {} labels",
                s[0],
                sources.len(),
                labels.len()
            )));
        }
        if let Some(v) = images.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "dataset value {v} outside [-1, 1]"
            )));
        }
        Ok(Self {
            images,
            sources,
            labels,
        })
    }

    /// Loads, resizes and normalizes every image in `dir`. Labels are unknown.
    pub fn from_directory(dir: &Path, size: usize) -> Result<Self> {
        let loaded = load_images(dir)?;
        let tensors: Vec<Tensor<f32>> = loaded.iter().map(|(_, img)| preprocess(img, size)).collect();
        let sources = loaded
            .iter()
            .map(|(p, _)| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect();
        let n = loaded.len();
        Self::new(Tensor::stack(&tensors)?, sources, vec![None; n])
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_size(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn labels(&self) -> &[Option<bool>] {
        &self.labels
    }

    /// `(positive, negative, unlabeled)` counts.
    pub fn class_counts(&self) -> (usize, usize, usize) {
        self.labels.iter().fold((0, 0, 0), |(p, n, u), l| match l {
            Some(true) => (p + 1, n, u),
            Some(false) => (p, n + 1, u),
            None => (p, n, u + 1),
        })
    }

    /// Restricts to images with the given label.
    pub fn filter_label(&self, label: bool) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == Some(label)).collect();
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!("no images labeled {label}")));
        }
        Ok(Self {
            images: self.images.gather_outer(&idx)?,
            sources: idx.iter().map(|&i| self.sources[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    pub fn sidecar_path(cache: &Path) -> PathBuf {
        cache.with_extension("json")
    }

    /// Writes the `GTD1` image blob to `path` and the JSON sidecar beside it.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.images
            .write_gtd1(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))?;
        let sidecar = Sidecar {
            paths: self.sources.clone(),
            labels: self.labels.clone(),
            image_size: self.image_size(),
        };
        let side = Self::sidecar_path(path);
        let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let images = Tensor::read_gtd1(&bytes[..]).map_err(|e| e.with_path(path))?;
        let side = Self::sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: Sidecar =
            serde_json::from_str(&text).map_err(|e| Error::malformed(&side, e.to_string()))?;
        let ds = Self::new(images, sidecar.paths, sidecar.labels).map_err(|e| Error::malformed(path, e.to_string()))?;
        if ds.image_size() != sidecar.image_size {
            return Err(Error::malformed(
                &side,
                format!("image_size {} does not match tensor size {}", sidecar.image_size, ds.image_size()),
            ));
        }
        Ok(ds)
    }
}

/// Seeded Fisher–Yates permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Shuffle, epoch));
    order
}

pub fn batches_per_epoch(n: usize, batch_size: usize) -> Result<usize> {
    if batch_size == 0 || batch_size > n {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} must be in 1..={n} (dataset size)"
        )));
    }
    Ok(n / batch_size)
}

/// Index lists for each full batch of one epoch; the trailing partial batch is dropped.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    let count = batches_per_epoch(n, batch_size)?;
    let order = epoch_order(n, seed, epoch);
    Ok(order
        .chunks_exact(batch_size)
        .take(count)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Materialized `[m, 1, S, S]` batches for one epoch.
pub fn batches(dataset: &ImageDataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Tensor<f32>>> {
    batch_indices(dataset.len(), batch_size, seed, epoch)?
        .iter()
        .map(|idx| dataset.images.gather_outer(idx))
        .collect()
}

/// Number of grid columns used for sample sheets.
pub const GRID_COLUMNS: usize = 5;

/// Images tiled row-major into `ceil(n/5)` rows of up to five columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageGrid {
    pub rows: usize,
    pub cols: usize,
    pub tile_height: usize,
    pub tile_width: usize,
    pub image: RawImage,
}

/// Denormalizes `[n, 1, H, W]` values into a tiled u8 sheet. Unused cells stay black.
pub fn tile_grid(images: &Tensor<f32>) -> Result<ImageGrid> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::InvalidShape {
            op: "tile_grid",
            shape: s.to_vec(),
            reason: "expected [n, 1, H, W]".into(),
        });
    }
    let (n, th, tw) = (s[0], s[2], s[3]);
    let cols = n.min(GRID_COLUMNS);
    let rows = n.div_ceil(GRID_COLUMNS);
    let (width, height) = (cols * tw, rows * th);
    let mut pixels = vec![0u8; width * height];
    for (i, tile) in images.data().chunks_exact(th * tw).enumerate() {
        let (r, c) = (i / GRID_COLUMNS, i % GRID_COLUMNS);
        for y in 0..th {
            let dst = (r * th + y) * width + c * tw;
            for (x, &v) in tile[y * tw..(y + 1) * tw].iter().enumerate() {
                pixels[dst + x] = denormalize_value(v);
            }
        }
    }
    Ok(ImageGrid {
        rows,
        cols,
        tile_height: th,
        tile_width: tw,
        image: RawImage::new(width, height, pixels)?,
    })
}

/// The first `n` images of a seeded shuffle, tiled into a grid.
pub fn real_sample_grid(dataset: &ImageDataset, n: usize, seed: u64) -> Result<ImageGrid> {
    if n == 0 || n > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {n} samples from a dataset of {}",
            dataset.len()
        )));
    }
    let order = epoch_order(dataset.len(), seed, 0);
    tile_grid(&dataset.images.gather_outer(&order[..n])?)
}
