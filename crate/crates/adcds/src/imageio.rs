//! Raster import/export: 8-bit grayscale PNG and PGM (P5).
//!
//! The pipeline standardizes on lossless inputs so metric results are
//! bit-stable. Multi-channel input is luma-converted.

use std::path::Path;

use image::{DynamicImage, ImageFormat};
use thiserror::Error;

use crate::types::{ProcessStep, SemImage};

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("unsupported bit depth or color type {0:?} in {1}")]
    UnsupportedFormat(String, String),
    #[error("zero-dimension image {0}")]
    ZeroDimension(String),
}

/// Decode a PNG or PGM file into a [`SemImage`]. The image id defaults to
/// the file stem.
pub fn import_image(path: impl AsRef<Path>, step: ProcessStep) -> Result<SemImage, ImageIoError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let dynimg = image::open(path).map_err(|source| ImageIoError::Read { path: display.clone(), source })?;
    if dynimg.width() == 0 || dynimg.height() == 0 {
        return Err(ImageIoError::ZeroDimension(display));
    }
    let gray = match dynimg {
        DynamicImage::ImageLuma8(g) => g,
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) | DynamicImage::ImageLumaA8(_) => {
            dynimg.to_luma8()
        }
        other => {
            return Err(ImageIoError::UnsupportedFormat(format!("{:?}", other.color()), display))
        }
    };
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let (w, h) = (gray.width(), gray.height());
    Ok(SemImage::new(w, h, gray.into_raw(), step, id).expect("decoder guarantees buffer size"))
}

/// Write a [`SemImage`] as an 8-bit grayscale PNG.
pub fn export_png(image: &SemImage, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
    let path = path.as_ref();
    let buf = image::GrayImage::from_raw(image.width(), image.height(), image.pixels().to_vec())
        .expect("SemImage invariant guarantees buffer size");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|source| ImageIoError::Write { path: path.display().to_string(), source })
}
