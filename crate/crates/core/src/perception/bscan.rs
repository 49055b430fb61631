use std::collections::HashSet;

use super::components::{components_above, Component};
use super::{ContactDecision, PerceptionError, PixelBox, PunctureDecision};
use crate::imaging::{BScanFrame, GrayImage, RIDGE_THICKNESS_PX};

pub const CONTACT_STEEPNESS_PER_PX: f64 = 0.5;

/// Blob mask threshold relative to the brightest median-filtered pixel.
const BLOB_THRESHOLD_FRAC: f64 = 0.9;
const BLOB_MIN_AREA: usize = 3;
const BLOB_MAX_AREA: usize = 80;
const BLOB_MAX_EXTENT: usize = 10;
const MIN_BLOB_RADIUS_PX: f64 = 2.0;
/// Columns beside the blob used to fit the wall ridge.
const RIDGE_PROBE_OFFSETS: [usize; 3] = [2, 3, 4];
const PUNCTURE_DEPTH_PX: f64 = 2.0;
const PUNCTURE_MIN_RUN: usize = 3;
const PUNCTURE_SEARCH_HALF: i64 = 6;

/// Probability of contact for a signed gap `g` in pixels (positive = needle above wall).
pub fn contact_probability(gap_px: f64) -> f64 {
    1.0 / (1.0 + (CONTACT_STEEPNESS_PER_PX * gap_px).exp())
}

/// Contact classifier. The gap is measured from the needle cross-section
/// center to the top edge of the upper wall ridge. Without a visible ridge
/// the probability is zero.
pub fn classify_contact(frame: &BScanFrame, threshold: f64) -> Result<ContactDecision, PerceptionError> {
    let blob = find_blob(&frame.image)?;
    let ridge = fit_ridge(&frame.image, &blob);
    let gap = ridge.map(|r| r.top - blob.center_row);
    let probability = gap.map_or(0.0, contact_probability);
    Ok(ContactDecision { probability, decision: probability >= threshold, threshold_used: threshold, gap_px: gap })
}

/// Puncture detector. Positive when the needle sits at least 2 px below the
/// wall and the wall ridge is missing over at least 3 consecutive columns
/// at the needle, with confidence at or above `conf_min`.
pub fn detect_puncture(frame: &BScanFrame, conf_min: f64) -> Result<PunctureDecision, PerceptionError> {
    let img = &frame.image;
    let blob = find_blob(img)?;
    let (x0, y0, x1, y1) = blob.mask.bbox();
    let bbox = PixelBox { x0: x0 as f64 - 0.5, y0: y0 as f64 - 0.5, x1: x1 as f64 + 0.5, y1: y1 as f64 + 0.5 };
    let contrast = blob.contrast;

    let Some(ridge) = fit_ridge(img, &blob) else {
        return Ok(PunctureDecision { bbox, decision: false, confidence: contrast });
    };
    let below = blob.center_row - ridge.top >= PUNCTURE_DEPTH_PX;

    let occluded = dilate(&blob.mask, img.width, img.height);
    let r_lo = (ridge.top - 1.0).floor() as i64;
    let mut r_hi = (blob.center_row + 4.0).ceil() as i64;
    if let Some(floor) = ridge.floor {
        // Stay above the lower wall in narrow vessels.
        r_hi = r_hi.min((floor - 1.0).floor() as i64);
    }
    let present_level = ridge.bg + 0.5 * (ridge.level - ridge.bg);
    let c_blob = blob.cx.round() as i64;

    let mut states = Vec::new();
    for c in c_blob - PUNCTURE_SEARCH_HALF..=c_blob + PUNCTURE_SEARCH_HALF {
        states.push(column_state(img, &occluded, c, r_lo, r_hi, present_level, blob.threshold, &ridge));
    }
    let mid = PUNCTURE_SEARCH_HALF as usize;
    let dropped_run = match states[mid] {
        ColumnState::Dropped(_) => {
            let left = states[..mid].iter().rev().take_while(|s| matches!(s, ColumnState::Dropped(_))).count();
            let right = states[mid + 1..].iter().take_while(|s| matches!(s, ColumnState::Dropped(_))).count();
            left + right + 1
        }
        _ => 0,
    };
    let discontinuity = dropped_run >= PUNCTURE_MIN_RUN;

    let raw = below && discontinuity;
    let confidence = if raw {
        let depths: Vec<f64> = states.iter().filter_map(|s| if let ColumnState::Dropped(d) = s { Some(*d) } else { None }).collect();
        let depth = depths.iter().sum::<f64>() / depths.len() as f64;
        (contrast * depth).sqrt().clamp(0.0, 1.0)
    } else {
        contrast
    };
    Ok(PunctureDecision { bbox, decision: raw && confidence >= conf_min, confidence })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ColumnState {
    Present,
    /// Ridge missing; payload is the relative intensity drop in [0, 1].
    Dropped(f64),
    Unknown,
}

#[allow(clippy::too_many_arguments)]
fn column_state(
    img: &GrayImage,
    occluded: &HashSet<(usize, usize)>,
    c: i64,
    r_lo: i64,
    r_hi: i64,
    present_level: f64,
    blob_threshold: f64,
    ridge: &RidgeFit,
) -> ColumnState {
    if c < 0 || c >= img.width as i64 {
        return ColumnState::Unknown;
    }
    let mut visible = Vec::new();
    for r in r_lo.max(0)..=r_hi.min(img.height as i64 - 1) {
        if occluded.contains(&(c as usize, r as usize)) {
            continue;
        }
        visible.push(f64::from(img.get(c as usize, r as usize)));
    }
    if visible.len() < 2 {
        return ColumnState::Unknown;
    }
    let peak = visible.iter().copied().filter(|&v| v < blob_threshold).fold(f64::NEG_INFINITY, f64::max);
    if peak >= present_level {
        return ColumnState::Present;
    }
    let span = (ridge.level - ridge.bg).max(1.0);
    ColumnState::Dropped((1.0 - (peak.max(ridge.bg) - ridge.bg) / span).clamp(0.0, 1.0))
}

fn dilate(mask: &Component, w: usize, h: usize) -> HashSet<(usize, usize)> {
    let mut out = HashSet::new();
    for &(x, y) in &mask.pixels {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    out.insert((nx as usize, ny as usize));
                }
            }
        }
    }
    out
}

struct Blob {
    mask: Component,
    threshold: f64,
    cx: f64,
    center_row: f64,
    contrast: f64,
}

fn find_blob(img: &GrayImage) -> Result<Blob, PerceptionError> {
    let peak = f64::from(img.median3_peak());
    let threshold = (BLOB_THRESHOLD_FRAC * peak).ceil();
    let mask = components_above(img, threshold.clamp(1.0, 255.0) as u8)
        .into_iter()
        .filter(|c| {
            let (x0, y0, x1, y1) = c.bbox();
            (BLOB_MIN_AREA..=BLOB_MAX_AREA).contains(&c.area())
                && x1 - x0 < BLOB_MAX_EXTENT
                && y1 - y0 < BLOB_MAX_EXTENT
        })
        .max_by(|a, b| a.area().cmp(&b.area()).then(a.mean_intensity(img).total_cmp(&b.mean_intensity(img))))
        .ok_or(PerceptionError::NeedleNotInScan)?;

    let (sw, sx) = mask.pixels.iter().fold((0.0, 0.0), |(sw, sx), &(x, y)| {
        let w = f64::from(img.get(x, y));
        (sw + w, sx + w * x as f64)
    });
    let cx = sx / sw;
    let c0 = cx.round() as i64;
    let (x0, y0, x1, _) = mask.bbox();
    let radius = MIN_BLOB_RADIUS_PX.max((x1 - x0) as f64 / 2.0 + 0.5);

    // Top edge per central column from accumulated coverage, then shifted
    // down by the disc's mean half-chord over that column.
    let tops: Vec<(i64, i64)> = (c0 - 1..=c0 + 1)
        .filter_map(|c| mask.pixels.iter().filter(|p| p.0 as i64 == c).map(|p| p.1 as i64).min().map(|t| (c, t)))
        .collect();
    let above: Vec<f64> = tops
        .iter()
        .flat_map(|&(c, t)| (t - 7..=t - 3).filter_map(move |r| img.at(c, r).map(f64::from)))
        .collect();
    let bg = median(&above).unwrap_or_else(|| median(&img.pixels.iter().map(|&v| f64::from(v)).collect::<Vec<_>>()).unwrap_or(0.0));
    let span = (peak - bg).max(1.0);
    let centers: Vec<f64> = tops
        .iter()
        .map(|&(c, t)| {
            let covered: f64 = (t - 2..=t).filter_map(|r| img.at(c, r)).map(|v| ((f64::from(v) - bg) / span).min(1.0)).sum();
            t as f64 + 0.5 - covered + mean_half_chord(radius, cx - c as f64)
        })
        .collect();
    let center_row = if centers.is_empty() {
        mask.centroid()[1].max(y0 as f64)
    } else {
        centers.iter().sum::<f64>() / centers.len() as f64
    };

    let contrast = ((mask.mean_intensity(img) - bg) / 255.0).clamp(0.0, 1.0);
    Ok(Blob { mask, threshold, cx, center_row, contrast })
}

/// Mean half-chord of a disc of radius `r` over the unit-wide column whose
/// center is offset `d` from the disc center.
fn mean_half_chord(r: f64, d: f64) -> f64 {
    const N: usize = 32;
    (0..N)
        .map(|i| {
            let x = d - 0.5 + (i as f64 + 0.5) / N as f64;
            (r * r - x * x).max(0.0).sqrt()
        })
        .sum::<f64>()
        / N as f64
}

#[derive(Debug, Clone, Copy)]
struct RidgeFit {
    /// Sub-pixel row of the ridge's upper edge.
    top: f64,
    level: f64,
    bg: f64,
    /// Upper edge of the next ridge below (the far wall), when visible.
    floor: Option<f64>,
}

/// Fit the upper wall ridge on probe columns either side of the blob.
fn fit_ridge(img: &GrayImage, blob: &Blob) -> Option<RidgeFit> {
    let (x0, _, x1, _) = blob.mask.bbox();
    let mut cols = Vec::new();
    for off in RIDGE_PROBE_OFFSETS {
        if let Some(c) = x0.checked_sub(off) {
            cols.push(c);
        }
        if x1 + off < img.width {
            cols.push(x1 + off);
        }
    }
    let fits: Vec<RidgeFit> = cols.into_iter().filter_map(|c| ridge_in_column(img, c)).collect();
    if fits.len() < 2 {
        return None;
    }
    let pick = |f: fn(&RidgeFit) -> f64| median(&fits.iter().map(f).collect::<Vec<_>>()).unwrap_or(0.0);
    let floors: Vec<f64> = fits.iter().filter_map(|r| r.floor).collect();
    let floor = if floors.len() * 2 > fits.len() { median(&floors) } else { None };
    Some(RidgeFit { top: pick(|r| r.top), level: pick(|r| r.level), bg: pick(|r| r.bg), floor })
}

fn ridge_in_column(img: &GrayImage, c: usize) -> Option<RidgeFit> {
    let h = img.height;
    let v: Vec<f64> = (0..h).map(|r| f64::from(img.get(c, r))).collect();
    let col_bg = median(&v)?;
    // Robust high level: second-largest value guards against a single salt pixel.
    let mut sorted = v.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let hi = sorted[1.min(h - 1)];
    if hi - col_bg < 40.0 {
        return None;
    }
    let mid = col_bg + 0.35 * (hi - col_bg);
    let rf = (4..h.saturating_sub(1)).find(|&r| v[r] >= mid && v[r + 1] >= mid)?;
    let level = v[rf + 1];
    let bg = median(&v[rf - 4..=rf - 2])?;
    let span = level - bg;
    if span < 20.0 {
        return None;
    }
    let covered: f64 = (rf - 1..=rf).map(|r| ((v[r] - bg) / span).min(1.0)).sum();
    let below = rf + RIDGE_THICKNESS_PX.ceil() as usize + 2;
    let floor = (below..h.saturating_sub(1)).find(|&r| v[r] >= mid && v[r + 1] >= mid).map(|r| {
        let covered: f64 = (r - 1..=r).map(|q| ((v[q] - bg) / span).clamp(0.0, 1.0)).sum();
        r as f64 + 0.5 - covered
    });
    Some(RidgeFit { top: rf as f64 + 0.5 - covered, level, bg, floor })
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
