//! Synthetic microscope and B-scan imaging.
//!
//! Frames carry their own physical scale so that perception can work from
//! pixels alone. Pixel centers sit at integer coordinates; a microscope pixel
//! `(u, v)` images XOY point `origin + (u, v) * scale`.

mod artifacts;
mod bscan;
mod microscope;
mod raster;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use artifacts::{apply_artifacts, ArtifactConfig, Occlusion};
pub use bscan::render_bscan;
pub use microscope::render_microscope;
pub use raster::GrayImage;

/// Fixed intensity palette shared by the renderers and the perception heuristics.
pub mod palette {
    pub const BACKGROUND_MEAN: f32 = 30.0;
    pub const BACKGROUND_SIGMA: f32 = 10.0;
    pub const VEIN: f32 = 90.0;
    pub const RIDGE: f32 = 180.0;
    pub const NEEDLE: f32 = 250.0;
    pub const SHADOW: f32 = 15.0;
}

pub const MICROSCOPE_SCALE_MM_PER_PX: f64 = 0.0586;
pub const BSCAN_SCALE_MM_PER_PX: f64 = 0.0357;
pub const BSCAN_SIZE_PX: usize = 224;

/// Rendered wall ridge thickness in B-scan pixels.
pub const RIDGE_THICKNESS_PX: f64 = 4.0;
/// Half-width of the ridge gap left at a puncture site.
pub const PUNCTURE_GAP_HALF_MM: f64 = 0.1;
/// Lateral extent over which a wall dent relaxes to zero.
pub const DENT_TAPER_MM: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("needle tip is {distance_mm:.3} mm from the scan plane (limit {limit_mm:.3} mm)")]
    ScanlineMissesRoi { distance_mm: f64, limit_mm: f64 },
    #[error("pixel ({u:.2}, {v:.2}) outside {width}x{height} frame")]
    OutOfBounds { u: f64, v: f64, width: usize, height: usize },
    #[error("invalid artifact config: {0}")]
    InvalidArtifact(String),
}

/// Vertical slice plane through `center` along unit direction `dir`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scanline {
    pub center: [f64; 2],
    pub dir: [f64; 2],
}

impl Scanline {
    /// Scanline through `point`, perpendicular to a vein axis.
    pub fn across(axis_dir: [f64; 2], point: [f64; 2]) -> Self {
        Self { center: point, dir: [-axis_dir[1], axis_dir[0]] }
    }

    /// Position along the scanline.
    pub fn along(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.center[0]) * self.dir[0] + (p[1] - self.center[1]) * self.dir[1]
    }

    /// Signed distance from the slice plane.
    pub fn offset(&self, p: [f64; 2]) -> f64 {
        -(p[0] - self.center[0]) * self.dir[1] + (p[1] - self.center[1]) * self.dir[0]
    }

    pub fn point_at(&self, s: f64) -> [f64; 2] {
        [self.center[0] + s * self.dir[0], self.center[1] + s * self.dir[1]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagingConfig {
    pub microscope_width: usize,
    pub microscope_height: usize,
    pub microscope_scale_mm_per_px: f64,
    /// XOY position of microscope pixel (0, 0); `None` centers the frame on the vein axis point.
    #[serde(default)]
    pub microscope_origin: Option<[f64; 2]>,
    pub bscan_width: usize,
    pub bscan_height: usize,
    pub bscan_scale_mm_per_px: f64,
    /// Depth window above the undeformed top wall shown at row 0.
    pub bscan_headroom_mm: f64,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            microscope_width: 512,
            microscope_height: 512,
            microscope_scale_mm_per_px: MICROSCOPE_SCALE_MM_PER_PX,
            microscope_origin: None,
            bscan_width: BSCAN_SIZE_PX,
            bscan_height: BSCAN_SIZE_PX,
            bscan_scale_mm_per_px: BSCAN_SCALE_MM_PER_PX,
            bscan_headroom_mm: 3.0,
        }
    }
}

impl ImagingConfig {
    pub fn microscope_origin_for(&self, center: [f64; 2]) -> [f64; 2] {
        self.microscope_origin.unwrap_or([
            center[0] - (self.microscope_width / 2) as f64 * self.microscope_scale_mm_per_px,
            center[1] - (self.microscope_height / 2) as f64 * self.microscope_scale_mm_per_px,
        ])
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = self.microscope_width > 0
            && self.microscope_height > 0
            && self.bscan_width > 0
            && self.bscan_height > 0
            && self.microscope_scale_mm_per_px > 0.0
            && self.bscan_scale_mm_per_px > 0.0
            && self.bscan_headroom_mm > 0.0;
        if ok {
            Ok(())
        } else {
            Err("imaging dimensions and scales must be positive".into())
        }
    }
}

/// Top-down microscope view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroscopeFrame {
    pub image: GrayImage,
    pub scale_mm_per_px: f64,
    pub origin: [f64; 2],
    pub t: f64,
}

impl MicroscopeFrame {
    pub fn px_to_mm(&self, px: [f64; 2]) -> Result<[f64; 2], ImagingError> {
        check_bounds(&self.image, px)?;
        Ok([self.origin[0] + px[0] * self.scale_mm_per_px, self.origin[1] + px[1] * self.scale_mm_per_px])
    }

    pub fn mm_to_px(&self, xy: [f64; 2]) -> [f64; 2] {
        [(xy[0] - self.origin[0]) / self.scale_mm_per_px, (xy[1] - self.origin[1]) / self.scale_mm_per_px]
    }

    pub fn contains_px(&self, px: [f64; 2]) -> bool {
        check_bounds(&self.image, px).is_ok()
    }
}

/// Vertical OCT slice. Column `c` images position `(c - width/2) * scale`
/// along the scanline; row `r` images depth `top_z - r * scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BScanFrame {
    pub image: GrayImage,
    pub scale_mm_per_px: f64,
    pub scanline: Scanline,
    pub top_z: f64,
    pub t: f64,
}

impl BScanFrame {
    fn center_col(&self) -> f64 {
        (self.image.width / 2) as f64
    }

    /// Pixel to slice coordinates `(s along scanline, z)`.
    pub fn px_to_mm(&self, px: [f64; 2]) -> Result<[f64; 2], ImagingError> {
        check_bounds(&self.image, px)?;
        Ok([(px[0] - self.center_col()) * self.scale_mm_per_px, self.top_z - px[1] * self.scale_mm_per_px])
    }

    pub fn mm_to_px(&self, sz: [f64; 2]) -> [f64; 2] {
        [self.center_col() + sz[0] / self.scale_mm_per_px, (self.top_z - sz[1]) / self.scale_mm_per_px]
    }
}

fn check_bounds(image: &GrayImage, px: [f64; 2]) -> Result<(), ImagingError> {
    let inside = px[0] >= -0.5
        && px[1] >= -0.5
        && px[0] <= image.width as f64 - 0.5
        && px[1] <= image.height as f64 - 0.5;
    if inside {
        Ok(())
    } else {
        Err(ImagingError::OutOfBounds { u: px[0], v: px[1], width: image.width, height: image.height })
    }
}

/// Fraction of the pixel interval `[c - 0.5, c + 0.5]` covered by `[lo, hi]`.
#[inline]
pub(crate) fn interval_coverage(c: f64, lo: f64, hi: f64) -> f64 {
    ((c + 0.5).min(hi) - (c - 0.5).max(lo)).clamp(0.0, 1.0)
}

/// Supersampling grid used for anti-aliased shapes.
pub(crate) const SUPERSAMPLE: usize = 8;
