//! Grayscale → resize → normalize preprocessing.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::pnm::{read_image, RawImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EXTENSIONS: [&str; 3] = ["pgm", "ppm", "pnm"];

/// Lists supported image files in `dir`, sorted lexicographically by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let supported = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if supported && path.is_file() {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_path_buf()));
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(paths)
}

/// Loads every supported image in `dir` as grayscale, in file-name order.
pub fn load_images(dir: &Path) -> Result<Vec<(PathBuf, RawImage)>> {
    let paths = list_images(dir)?;
    // Decoding fans out; collect() preserves file order.
    paths
        .into_par_iter()
        .map(|p| read_image(&p).map(|img| (p, img)))
        .collect()
}

/// Bilinear resize to `size`×`size` with corner-aligned sampling: output pixel `i`
/// samples source coordinate `i·(src − 1)/(size − 1)`. Results round half away from zero.
pub fn resize(img: &RawImage, size: usize) -> RawImage {
    assert!(size > 0, "resize target must be positive");
    if img.width == size && img.height == size {
        return img.clone();
    }
    let coord = |i: usize, src: usize| -> (usize, usize, f64) {
        if size == 1 || src == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (src - 1) as f64 / (size - 1) as f64;
        let lo = (pos.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut pixels = Vec::with_capacity(size * size);
    for oy in 0..size {
        let (y0, y1, fy) = coord(oy, img.height);
        for ox in 0..size {
            let (x0, x1, fx) = coord(ox, img.width);
            let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
            let bottom = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    RawImage {
        width: size,
        height: size,
        pixels,
    }
}

/// `v ↦ v/127.5 − 1`, producing a `[1, H, W]` tensor in [−1, 1].
pub fn normalize(img: &RawImage) -> Tensor<f32> {
    let data = img.pixels.iter().map(|&v| normalize_value(v)).collect();
    Tensor::new([1, img.height, img.width], data).expect("image dims are positive")
}

#[inline]
pub fn normalize_value(v: u8) -> f32 {
    (v as f64 / 127.5 - 1.0) as f32
}

/// Inverse of [`normalize_value`], rounded to the nearest u8 and clamped.
#[inline]
pub fn denormalize_value(x: f32) -> u8 {
    ((x as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Runs the full chain on one image.
pub fn preprocess(img: &RawImage, size: usize) -> Tensor<f32> {
    normalize(&resize(img, size))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_size_resize_is_identity() {
        let pixels: Vec<u8> = (0..128 * 128).map(|i| (i * 7 % 251) as u8).collect();
        let img = RawImage::new(128, 128, pixels).unwrap();
        assert_eq!(resize(&img, 128), img);
    }

    #[test]
    fn checkerboard_upsample_matches_hand_weights() {
        let img = RawImage::new(2, 2, vec![0, 255, 255, 0]).unwrap();
        let out = resize(&img, 4);
        // v(x, y) = 255·(x + y − 2xy) at x, y ∈ {0, 1/3, 2/3, 1}, rounded.
        #[rustfmt::skip]
        let expected = [
            0,   85,  170, 255,
            85,  113, 142, 170,
            170, 142, 113, 85,
            255, 170, 85,  0,
        ];
        assert_eq!(out.pixels, expected);
        for (x, y) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            let v = out.get(x, y);
            assert!(v > 0 && v < 255);
        }
    }

    #[test]
    fn normalize_endpoints_and_midpoints() {
        assert_eq!(normalize_value(0), -1.0);
        assert_eq!(normalize_value(255), 1.0);
        assert!((normalize_value(127) as f64 + 0.003921568627).abs() < 1e-7);
        assert!((normalize_value(128) as f64 - 0.003921568627).abs() < 1e-7);
    }

    #[test]
    fn denormalize_inverts_normalize_on_every_byte() {
        for v in 0..=255u8 {
            assert_eq!(denormalize_value(normalize_value(v)), v);
        }
    }

    #[test]
    fn missing_and_empty_directories_fail() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_images(dir.path()), Err(Error::EmptyDirectory(_))));
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        assert!(matches!(load_images(dir.path()), Err(Error::EmptyDirectory(_))));
        assert!(matches!(
            load_images(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn loads_in_lexicographic_order_and_names_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, v: u8| {
            let img = RawImage::filled(2, 2, v).unwrap();
            super::super::pnm::write_pgm(&dir.path().join(name), &img).unwrap();
        };
        write("b.pgm", 2);
        write("a.pgm", 1);
        let loaded = load_images(dir.path()).unwrap();
        let names: Vec<_> = loaded
            .iter()
            .map(|(p, _)| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["a.pgm", "b.pgm"]);
        assert_eq!(loaded[0].1.pixels, [1; 4]);

        fs::write(dir.path().join("c.pgm"), b"P5\n4 4").unwrap();
        let err = load_images(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Malformed { .. }));
        assert!(err.to_string().contains("c.pgm"), "{err}");
    }

    proptest! {
        #[test]
        fn constant_images_stay_constant(w in 1usize..40, h in 1usize..40, v in any::<u8>(), s in 1usize..48) {
            let out = resize(&RawImage::filled(w, h, v).unwrap(), s);
            prop_assert!(out.pixels.iter().all(|&p| p == v));
            prop_assert_eq!(out.pixels.len(), s * s);
        }

        #[test]
        fn ramps_keep_extremes_and_order(w in 2usize..40, s in 2usize..64) {
            // Horizontal ramp 0..=255 across the width.
            let row: Vec<u8> = (0..w).map(|x| (x * 255 / (w - 1)) as u8).collect();
            let img = RawImage::new(w, 3, row.repeat(3)).unwrap();
            let out = resize(&img, s);
            let first = &out.pixels[..s];
            prop_assert_eq!(first[0], 0);
            prop_assert_eq!(first[s - 1], 255);
            prop_assert!(first.windows(2).all(|p| p[0] <= p[1]));
        }

        #[test]
        fn normalized_values_lie_in_unit_range(v in any::<u8>()) {
            let x = normalize_value(v);
            prop_assert!((-1.0..=1.0).contains(&x));
            prop_assert!((x - (denormalize_value(x) as f32 / 127.5 - 1.0)).abs() <= 2.0 / 255.0);
        }
    }
}
