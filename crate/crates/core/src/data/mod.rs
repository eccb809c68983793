//! Dataset loading, preprocessing and boundary ground truth.

pub mod manifest;
pub mod preprocess;
pub mod raster;
pub mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::{Float, Tensor};

pub use manifest::{load_manifest, parse_manifest, Manifest, Record};
pub use preprocess::{
    binarize, center_crop, crop, flip_horizontal, resize_bilinear, sobel_boundary, Preprocessor,
};
pub use raster::{decode_raster, encode_png, quantize_map, Raster, RasterError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("missing file: {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Raster { path: PathBuf, source: RasterError },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("{path}: {inner}")]
    InFile { path: PathBuf, inner: Box<DataError> },
    #[error("dimension mismatch: {path} is {found:?}, expected {expected:?}")]
    DimensionMismatch {
        path: PathBuf,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid preprocessing: {0}")]
    Config(String),
}

impl DataError {
    pub fn in_file(self, path: &Path) -> Self {
        DataError::InFile {
            path: path.to_path_buf(),
            inner: Box::new(self),
        }
    }
}

/// One image with its ground truth. `image`/`depth` are `h×w×3` in `[0, 1]`,
/// `mask`/`boundary` are binary `h×w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub image: Tensor<T>,
    pub depth: Option<Tensor<T>>,
    pub mask: Tensor<T>,
    pub boundary: Tensor<T>,
}

impl<T: Float> Sample<T> {
    /// Builds a sample from decoded rasters, normalising depth and
    /// binarising the mask.
    pub fn from_rasters(image: &Raster, mask: &Raster, depth: Option<&Raster>) -> Self {
        let mask = binarize(&mask.to_gray());
        Sample {
            image: image.to_rgb(),
            depth: depth.map(|d| normalize_depth(&d.to_gray())),
            boundary: sobel_boundary(&mask),
            mask,
        }
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.mask.shape()[0], self.mask.shape()[1])
    }
}

/// Min-max normalises an `h×w` depth map to `[0, 1]` and replicates it to
/// three channels. A constant map becomes all zeros.
pub fn normalize_depth<T: Float>(depth: &Tensor<T>) -> Tensor<T> {
    let (lo, hi) = depth
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.as_f64()), hi.max(v.as_f64()))
        });
    let range = hi - lo;
    let (h, w) = (depth.shape()[0], depth.shape()[1]);
    Tensor::from_fn(&[h, w, 3], |i| {
        if range > 0.0 {
            T::from_f64((depth.data()[i / 3].as_f64() - lo) / range)
        } else {
            T::zero()
        }
    })
}

pub fn read_raster(path: &Path) -> Result<Raster, DataError> {
    let bytes = std::fs::read(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => DataError::Missing(path.to_path_buf()),
        _ => DataError::Io {
            path: path.to_path_buf(),
            source,
        },
    })?;
    decode_raster(&bytes).map_err(|source| DataError::Raster {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads one manifest record at native resolution.
pub fn load_sample<T: Float>(record: &Record) -> Result<Sample<T>, DataError> {
    let image = read_raster(&record.image)?;
    let mask = read_raster(&record.mask)?;
    let depth = record.depth.as_deref().map(read_raster).transpose()?;
    let expected = (image.width, image.height);
    let others = [Some((&mask, &record.mask)), depth.as_ref().zip(record.depth.as_ref())];
    for (r, path) in others.into_iter().flatten() {
        if (r.width, r.height) != expected {
            return Err(DataError::DimensionMismatch {
                path: path.clone(),
                expected,
                found: (r.width, r.height),
            });
        }
    }
    Ok(Sample::from_rasters(&image, &mask, depth.as_ref()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_depth_normalises_to_zero() {
        let d = normalize_depth(&Tensor::<f64>::full(&[2, 3], 0.4));
        assert_eq!(d.shape(), &[2, 3, 3]);
        assert!(d.data().iter().all(|&v| v == 0.0));
        let d = normalize_depth(&Tensor::<f64>::from_f64s(&[1, 2], &[0.2, 0.6]).unwrap());
        assert_eq!(d.data(), &[0., 0., 0., 1., 1., 1.]);
    }

    #[test]
    fn white_mask_is_all_ones() {
        let img = Raster::rgb(2, 2, vec![128; 12]);
        let mask = Raster::gray(2, 2, vec![255; 4]);
        let s = Sample::<f64>::from_rasters(&img, &mask, None);
        assert!(s.mask.data().iter().all(|&v| v == 1.0));
        assert!(s.boundary.data().iter().all(|&v| v == 0.0));
        assert!((s.image.data()[0] - 128.0 / 255.0).abs() < 1e-15);
    }
}
