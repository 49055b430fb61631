use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{GrayImage, ImagingError};
use crate::rng::{rng_for, stream};

/// Rectangle (pixel coordinates, inclusive-exclusive) painted with a flat
/// occluder intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    pub x: i64,
    pub y: i64,
    pub width: i64,
    pub height: i64,
    pub fill: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactConfig {
    pub brightness_pct: f64,
    pub exposure_pct: f64,
    /// Fraction of pixels replaced by salt noise.
    pub noise_frac: f64,
    #[serde(default)]
    pub hflip: bool,
    #[serde(default)]
    pub occlusion: Option<Occlusion>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ArtifactConfig {
    fn default() -> Self {
        Self { brightness_pct: 0.0, exposure_pct: 0.0, noise_frac: 0.0, hflip: false, occlusion: None, seed: 0 }
    }
}

impl ArtifactConfig {
    pub const BRIGHTNESS_MAX_PCT: f64 = 15.0;
    pub const EXPOSURE_MAX_PCT: f64 = 10.0;
    pub const NOISE_MAX_FRAC: f64 = 0.001;

    pub fn validate(&self) -> Result<(), ImagingError> {
        let in_range = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo && v <= hi;
        if !in_range(self.brightness_pct, -Self::BRIGHTNESS_MAX_PCT, Self::BRIGHTNESS_MAX_PCT) {
            return Err(ImagingError::InvalidArtifact(format!("brightness {}% outside ±15%", self.brightness_pct)));
        }
        if !in_range(self.exposure_pct, -Self::EXPOSURE_MAX_PCT, Self::EXPOSURE_MAX_PCT) {
            return Err(ImagingError::InvalidArtifact(format!("exposure {}% outside ±10%", self.exposure_pct)));
        }
        if !in_range(self.noise_frac, 0.0, Self::NOISE_MAX_FRAC) {
            return Err(ImagingError::InvalidArtifact(format!("noise fraction {} outside [0, 0.001]", self.noise_frac)));
        }
        if let Some(o) = self.occlusion {
            if o.width < 0 || o.height < 0 {
                return Err(ImagingError::InvalidArtifact("occlusion size must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.brightness_pct == 0.0
            && self.exposure_pct == 0.0
            && self.noise_frac == 0.0
            && !self.hflip
            && self.occlusion.is_none()
    }
}

/// Brightness, exposure curve, salt noise, flip, then occlusion; clamped to
/// [0, 255]. Deterministic in `cfg.seed`.
pub fn apply_artifacts(image: &GrayImage, cfg: &ArtifactConfig) -> Result<GrayImage, ImagingError> {
    cfg.validate()?;
    if cfg.is_identity() {
        return Ok(image.clone());
    }
    let (w, h) = (image.width, image.height);
    let gain = 1.0 + cfg.brightness_pct / 100.0;
    let gamma = 1.0 / (1.0 + cfg.exposure_pct / 100.0);
    let lut: Vec<f64> = (0..=255u8)
        .map(|p| {
            let b = (f64::from(p) * gain).clamp(0.0, 255.0);
            255.0 * (b / 255.0).powf(gamma)
        })
        .collect();
    let mut buf: Vec<f64> = image.pixels.iter().map(|&p| lut[p as usize]).collect();

    let n = w * h;
    let count = (n as f64 * cfg.noise_frac).floor() as usize;
    if count > 0 {
        let mut rng = rng_for(cfg.seed, stream::ARTIFACT, 0);
        for idx in sample(&mut rng, n, count) {
            buf[idx] = 255.0;
        }
    }

    if cfg.hflip {
        for row in buf.chunks_mut(w) {
            row.reverse();
        }
    }

    if let Some(o) = cfg.occlusion {
        let x0 = o.x.clamp(0, w as i64) as usize;
        let x1 = (o.x + o.width).clamp(0, w as i64) as usize;
        let y0 = o.y.clamp(0, h as i64) as usize;
        let y1 = (o.y + o.height).clamp(0, h as i64) as usize;
        for y in y0..y1 {
            for x in x0..x1 {
                buf[y * w + x] = f64::from(o.fill);
            }
        }
    }

    let pixels = buf.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    Ok(GrayImage { width: w, height: h, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> GrayImage {
        let pixels = (0..w * h).map(|i| (i % 256) as u8).collect();
        GrayImage { width: w, height: h, pixels }
    }

    #[test]
    fn zero_config_is_identity() {
        let img = ramp(31, 17);
        assert_eq!(apply_artifacts(&img, &ArtifactConfig::default()).unwrap(), img);
        // Non-trivial path with neutral values also reproduces the input.
        let cfg = ArtifactConfig { seed: 9, hflip: true, ..ArtifactConfig::default() };
        let twice = apply_artifacts(&apply_artifacts(&img, &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(twice, img);
    }

    #[test]
    fn brightness_plus_15_on_uniform_100() {
        let img = GrayImage::filled(8, 8, 100);
        let cfg = ArtifactConfig { brightness_pct: 15.0, ..ArtifactConfig::default() };
        let out = apply_artifacts(&img, &cfg).unwrap();
        assert!(out.pixels.iter().all(|&p| p == 115));
    }

    #[test]
    fn max_noise_replaces_exactly_50_pixels() {
        let img = GrayImage::filled(224, 224, 30);
        let cfg = ArtifactConfig { noise_frac: 0.001, seed: 3, ..ArtifactConfig::default() };
        let out = apply_artifacts(&img, &cfg).unwrap();
        assert_eq!(out.pixels.iter().filter(|&&p| p == 255).count(), 50);
    }

    #[test]
    fn out_of_range_values_rejected() {
        let img = GrayImage::filled(4, 4, 30);
        for cfg in [
            ArtifactConfig { brightness_pct: 16.0, ..ArtifactConfig::default() },
            ArtifactConfig { exposure_pct: -10.5, ..ArtifactConfig::default() },
            ArtifactConfig { noise_frac: 0.002, ..ArtifactConfig::default() },
        ] {
            assert!(matches!(apply_artifacts(&img, &cfg), Err(ImagingError::InvalidArtifact(_))));
        }
    }

    #[test]
    fn exposure_brightens_midtones() {
        let img = GrayImage::filled(4, 4, 100);
        let up = apply_artifacts(&img, &ArtifactConfig { exposure_pct: 10.0, ..ArtifactConfig::default() }).unwrap();
        let down = apply_artifacts(&img, &ArtifactConfig { exposure_pct: -10.0, ..ArtifactConfig::default() }).unwrap();
        assert!(up.pixels[0] > 100 && down.pixels[0] < 100);
    }

    #[test]
    fn occlusion_paints_rectangle() {
        let img = GrayImage::filled(10, 10, 200);
        let occ = Occlusion { x: 2, y: 3, width: 4, height: 2, fill: 90 };
        let out = apply_artifacts(&img, &ArtifactConfig { occlusion: Some(occ), ..ArtifactConfig::default() }).unwrap();
        assert_eq!(out.pixels.iter().filter(|&&p| p == 90).count(), 8);
        assert_eq!(out.get(2, 3), 90);
        assert_eq!(out.get(6, 3), 200);
    }
}
