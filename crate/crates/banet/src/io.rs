//! PNG/JPEG reading and writing for images and masks.

use std::path::Path;

use banet_core::raster::{Grid, Image, MaskMap, MaskRole};
use image::{DynamicImage, GrayImage, ImageReader, RgbImage};

use crate::error::{BanetError, Result};

fn open(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| BanetError::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| BanetError::io(path, e))?;
    reader.decode().map_err(|e| BanetError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads an 8-bit RGB(A) or grayscale file as an RGB image in `[0, 1]`.
/// Grayscale is replicated to three channels; alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = open(path)?;
    if img.color().has_alpha() {
        log::warn!("{}: dropping alpha channel", path.display());
    }
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Ok(Image::new(h as usize, w as usize, data)?)
}

/// Reads a single-channel 8-bit mask. Target roles are thresholded at 127.
pub fn load_mask(path: impl AsRef<Path>, role: MaskRole) -> Result<MaskMap> {
    let path = path.as_ref();
    let img = open(path)?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(BanetError::Decode {
                path: path.to_path_buf(),
                message: format!("expected a single-channel 8-bit mask, found {:?}", other.color()),
            })
        }
    };
    let (w, h) = gray.dimensions();
    Ok(MaskMap::from_u8(h as usize, w as usize, gray.as_raw(), role)?)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| BanetError::io(parent, e))?;
    }
    Ok(())
}

fn write(path: &Path, img: DynamicImage) -> Result<()> {
    ensure_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| BanetError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a mask as 8-bit grayscale PNG.
pub fn save_mask(path: impl AsRef<Path>, mask: &MaskMap) -> Result<()> {
    let (h, w) = mask.dims();
    let gray = GrayImage::from_raw(w as u32, h as u32, mask.to_u8()).expect("buffer matches dims");
    write(path.as_ref(), DynamicImage::ImageLuma8(gray))
}

/// Writes any `[0, 1]` grid as 8-bit grayscale PNG (values are clamped).
pub fn save_grid(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    let (h, w) = grid.dims();
    let bytes = grid.as_slice().iter().map(|&v| to_byte(v)).collect();
    let gray = GrayImage::from_raw(w as u32, h as u32, bytes).expect("buffer matches dims");
    write(path.as_ref(), DynamicImage::ImageLuma8(gray))
}

pub fn save_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let (h, w) = image.dims();
    let bytes = image.as_slice().iter().map(|&v| to_byte(v)).collect();
    let rgb = RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer matches dims");
    write(path.as_ref(), DynamicImage::ImageRgb8(rgb))
}
