use serde::{Deserialize, Serialize};

use super::components::components_above;
use super::{PerceptionError, PixelBox, TipDetection};
use crate::imaging::MicroscopeFrame;

pub const TIP_BOX_PX: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TipDetectorConfig {
    /// Direction of needle advance in the image, degrees from +u.
    pub insertion_azimuth_deg: f64,
    pub threshold: u8,
    pub min_area: usize,
    /// Expected visible shaft length; shorter components lower the confidence.
    pub expected_shaft_px: f64,
}

impl Default for TipDetectorConfig {
    fn default() -> Self {
        Self { insertion_azimuth_deg: 0.0, threshold: 170, min_area: 10, expected_shaft_px: 0.0 }
    }
}

/// Locate the needle tip: largest bright component, its most advanced pixel
/// along the insertion azimuth, then sub-pixel refinement.
///
/// Refinement measures the shaft's anti-aliased coverage: the perpendicular
/// coordinate is the coverage-weighted centroid across the shaft, the axial
/// coordinate is where accumulated coverage ends given the shaft width
/// measured a few pixels behind the tip. Near frame edges it falls back to an
/// intensity-weighted centroid over a 5x5 window.
pub fn detect_tip(frame: &MicroscopeFrame, cfg: &TipDetectorConfig) -> Result<TipDetection, PerceptionError> {
    let img = &frame.image;
    let comps = components_above(img, cfg.threshold);
    let comp = comps
        .into_iter()
        .max_by_key(|c| c.area())
        .filter(|c| c.area() >= cfg.min_area)
        .ok_or(PerceptionError::NoNeedleDetected)?;

    let az = cfg.insertion_azimuth_deg.to_radians();
    let a = [az.cos(), az.sin()];
    let n = [-a[1], a[0]];
    let centroid = comp.centroid();
    let proj = |x: usize, y: usize| x as f64 * a[0] + y as f64 * a[1];

    let mut best = comp.pixels[0];
    let mut best_key = (proj(best.0, best.1), f64::NEG_INFINITY);
    for &(x, y) in &comp.pixels {
        let t = proj(x, y);
        let d = -((x as f64 - centroid[0]).powi(2) + (y as f64 - centroid[1]).powi(2));
        if t > best_key.0 + 1e-9 || ((t - best_key.0).abs() <= 1e-9 && d > best_key.1) {
            best = (x, y);
            best_key = (t, d);
        }
    }
    let extremal = [best.0 as f64, best.1 as f64];

    let tip_px = coverage_refine(frame, extremal, a, n).unwrap_or_else(|| window_centroid(frame, best));

    // Confidence: contrast against the non-needle background, times visible shaft fraction.
    let total: f64 = img.pixels.iter().map(|&v| f64::from(v)).sum();
    let comp_sum: f64 = comp.pixels.iter().map(|&(x, y)| f64::from(img.get(x, y))).sum();
    let bg_n = img.pixels.len() - comp.area();
    let bg_sum = total - comp_sum;
    let bg_mean = if bg_n > 0 { bg_sum / bg_n as f64 } else { 0.0 };
    let contrast = ((comp.mean_intensity(img) - bg_mean) / 255.0).clamp(0.0, 1.0);
    let (t_min, t_max) = comp
        .pixels
        .iter()
        .map(|&(x, y)| proj(x, y))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    let completeness = if cfg.expected_shaft_px > 0.0 {
        ((t_max - t_min + 1.0) / cfg.expected_shaft_px).min(1.0)
    } else {
        1.0
    };
    let confidence = (contrast * completeness).clamp(0.0, 1.0);

    let half = TIP_BOX_PX / 2.0;
    let bbox = PixelBox {
        x0: (tip_px[0] - half).max(-0.5),
        y0: (tip_px[1] - half).max(-0.5),
        x1: (tip_px[0] + half).min(img.width as f64 - 0.5),
        y1: (tip_px[1] + half).min(img.height as f64 - 0.5),
    };
    Ok(TipDetection { tip_px, bbox, confidence })
}

/// Axial extent of the reference strip behind the extremal pixel.
const REF_START: f64 = -7.5;
const REF_END: f64 = -2.5;
const WINDOW_AHEAD: f64 = 2.5;
/// Background samples come from this far ahead of the tip, on the same row.
const BG_AHEAD: f64 = 12.5;
/// Half-width of the signal band: shaft half-width plus anti-aliasing margin.
const HALF_BAND: f64 = 2.5;
const MIN_BG_SAMPLES: usize = 4;

fn coverage_refine(frame: &MicroscopeFrame, e: [f64; 2], a: [f64; 2], n: [f64; 2]) -> Option<[f64; 2]> {
    let img = &frame.image;
    let reach = (REF_START.abs().max(BG_AHEAD) + HALF_BAND + 1.0).ceil() as i64;
    let (ex, ey) = (e[0] as i64, e[1] as i64);

    // Rows are 1 px bins of the perpendicular offset. Background per row is
    // the median of pixels ahead of the tip, which tracks edges parallel to the shaft.
    let rows = (2.0 * HALF_BAND).ceil() as usize + 1;
    let row_of = |s: f64| ((s + HALF_BAND).floor() as usize).min(rows - 1);
    let mut ahead: Vec<Vec<f64>> = vec![Vec::new(); rows];
    let mut band: Vec<(f64, f64, usize, f64)> = Vec::new();

    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let t = dx as f64 * a[0] + dy as f64 * a[1];
            let s = dx as f64 * n[0] + dy as f64 * n[1];
            if !(REF_START..BG_AHEAD).contains(&t) || s.abs() > HALF_BAND {
                continue;
            }
            let r = row_of(s);
            if t >= WINDOW_AHEAD {
                if let Some(v) = img.at(ex + dx, ey + dy) {
                    ahead[r].push(f64::from(v));
                }
            } else {
                band.push((t, s, r, f64::from(img.at(ex + dx, ey + dy)?)));
            }
        }
    }
    let bg: Vec<Option<f64>> = ahead.iter().map(|v| if v.len() >= MIN_BG_SAMPLES { median(v) } else { None }).collect();

    let (mut ref_sum, mut tip_sum, mut wsum, mut ssum) = (0.0, 0.0, 0.0, 0.0);
    for &(t, s, r, v) in &band {
        let w = v - bg[r]?;
        if t < REF_END {
            ref_sum += w;
        } else {
            tip_sum += w;
        }
        if w > 0.0 {
            wsum += w;
            ssum += w * s;
        }
    }
    let width = ref_sum / (REF_END - REF_START);
    if width <= 1.0 || wsum <= 0.0 {
        return None;
    }
    let t_tip = REF_END + tip_sum / width;
    let s_mean = ssum / wsum;
    // Extremal pixel sits at (t, s) = (0, 0).
    Some([e[0] + t_tip * a[0] + s_mean * n[0], e[1] + t_tip * a[1] + s_mean * n[1]])
}

fn window_centroid(frame: &MicroscopeFrame, (x, y): (usize, usize)) -> [f64; 2] {
    let img = &frame.image;
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for dy in -2i64..=2 {
        for dx in -2i64..=2 {
            if let Some(v) = img.at(x as i64 + dx, y as i64 + dy) {
                let w = f64::from(v);
                sw += w;
                sx += w * (x as i64 + dx) as f64;
                sy += w * (y as i64 + dy) as f64;
            }
        }
    }
    if sw > 0.0 {
        [sx / sw, sy / sw]
    } else {
        [x as f64, y as f64]
    }
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) })
}
