//! Differentiable silhouette rasterization and hard instance-ID rendering.

mod idmap;
mod pgm;
mod silhouette;

pub use idmap::{rasterize_instance_ids, InstanceIdMap};
pub use pgm::{read_mask_pgm, write_mask_pgm, write_soft_pgm_text};
pub use silhouette::{rasterize_silhouette_on_tape, rasterize_silhouette_values, SilhouetteOutput};

use crate::error::{Error, Result};

/// Rasterization knobs. Distances are measured in normalized image
/// coordinates, so the blur/blend scales keep their meaning at any
/// resolution.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RasterConfig {
    pub width: usize,
    pub height: usize,
    /// K nearest faces blended per pixel.
    pub faces_per_pixel: usize,
    /// Squared-distance cutoff for faces near a pixel.
    pub blur_radius: f64,
    /// Sigmoid temperature on the signed squared distance.
    pub blend_sigma: f64,
}

impl RasterConfig {
    pub fn desk(width: usize, height: usize) -> Self {
        RasterConfig {
            width,
            height,
            faces_per_pixel: 8,
            blur_radius: 1e-4,
            blend_sigma: 1e-4,
        }
    }

    /// Full-scale preset: 50 faces per pixel, blur and blend at 1e-4.
    pub fn full_scale(width: usize, height: usize) -> Self {
        RasterConfig {
            faces_per_pixel: 50,
            ..Self::desk(width, height)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.faces_per_pixel == 0 {
            return Err(Error::InvalidArgument("faces_per_pixel must be >= 1".into()));
        }
        if self.blur_radius <= 0.0 || self.blend_sigma <= 0.0 {
            return Err(Error::InvalidArgument(
                "blur radius and blend sigma must be positive".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("zero raster size".into()));
        }
        Ok(())
    }

    /// Normalized center of pixel (row, col).
    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            (col as f64 + 0.5) / self.width as f64,
            (row as f64 + 0.5) / self.height as f64,
        ]
    }
}

/// Boolean occupancy image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_soft(values: &[f64], width: usize, height: usize) -> Self {
        debug_assert_eq!(values.len(), width * height);
        BinaryMask {
            width,
            height,
            data: values.iter().map(|&v| v >= 0.5).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }
}

/// Intersection over union of two equally sized binary masks; defined as 0
/// when both are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch {
            op: "mask_iou",
            lhs: vec![a.height, a.width],
            rhs: vec![b.height, b.width],
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// IoU between a soft map (thresholded at 0.5) and a binary mask.
pub fn soft_mask_iou(soft: &[f64], mask: &BinaryMask) -> Result<f64> {
    let soft_mask = BinaryMask::from_soft(soft, mask.width, mask.height);
    mask_iou(&soft_mask, mask)
}
