//! Windowed grayscale PNG of the central axial slice.

use std::path::Path;

use image::{GrayImage, Luma};
use trisoct_core::Volume;

use crate::CliError;

/// Slice `z = nz/2`, image row `y`, column `x`. Values are mapped linearly
/// from `window` to 0..=255 and clamped.
pub fn axial_slice(volume: &Volume, window: [f64; 2]) -> GrayImage {
    let g = &volume.grid;
    let iz = g.nz / 2;
    let span = window[1] - window[0];
    GrayImage::from_fn(g.nx as u32, g.ny as u32, |x, y| {
        let v = volume.get(x as usize, y as usize, iz);
        let t = if span > 0.0 { (v - window[0]) / span } else { 0.0 };
        let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
        Luma([(t * 255.0).round() as u8])
    })
}

pub fn write_axial_png(path: &Path, volume: &Volume, window: [f64; 2]) -> Result<(), CliError> {
    axial_slice(volume, window)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}
