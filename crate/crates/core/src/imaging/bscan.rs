use rand_distr::{Distribution, Normal};

use super::{
    interval_coverage, palette, BScanFrame, GrayImage, ImagingConfig, ImagingError, Scanline, DENT_TAPER_MM,
    PUNCTURE_GAP_HALF_MM, RIDGE_THICKNESS_PX, SUPERSAMPLE,
};
use crate::rng::{rng_for, stream};
use crate::world::{TissuePhase, WorldState};

/// Minimum rendered needle cross-section radius, in pixels.
const MIN_BLOB_RADIUS_PX: f64 = 2.0;

/// Vertical slice along `scanline`. The vein shows as two wall ridges; the
/// needle as a bright disc centered on the tip with an acoustic-style shadow
/// beneath it. Wall ridges are drawn over the shadow.
pub fn render_bscan(world: &WorldState, cfg: &ImagingConfig, scanline: &Scanline) -> Result<BScanFrame, ImagingError> {
    let (w, h) = (cfg.bscan_width, cfg.bscan_height);
    let scale = cfg.bscan_scale_mm_per_px;
    let top_z = world.vein.depth_z + cfg.bscan_headroom_mm;
    let center_col = (w / 2) as f64;

    let tip = world.needle.tip;
    let limit = w as f64 * scale / 2.0;
    let offset = scanline.offset(tip.xy());
    if offset.abs() > limit {
        return Err(ImagingError::ScanlineMissesRoi { distance_mm: offset.abs(), limit_mm: limit });
    }
    let tip_col = center_col + scanline.along(tip.xy()) / scale;
    let tip_row = (top_z - tip.z) / scale;
    let blob_r = (world.needle.tip_radius_mm() / scale).max(MIN_BLOB_RADIUS_PX);

    let mut rng = rng_for(world.rng_seed, stream::BSCAN, world.t.to_bits());
    let speckle = Normal::new(palette::BACKGROUND_MEAN, palette::BACKGROUND_SIGMA).expect("valid sigma");
    let mut buf: Vec<f32> = (0..w * h).map(|_| speckle.sample(&mut rng).clamp(0.0, 255.0)).collect();

    // Shadow under the needle.
    for c in 0..w {
        if (c as f64 - tip_col).abs() <= blob_r {
            let start = tip_row.ceil().max(0.0) as usize;
            for r in start..h {
                buf[r * w + c] = palette::SHADOW;
            }
        }
    }

    let vein = &world.vein;
    let tissue = &world.tissue;
    let gap_center = tissue.puncture_site.map(|p| center_col + scanline.along(p) / scale);
    let gap_half = PUNCTURE_GAP_HALF_MM / scale;
    let tip_over_vein = vein.covers(tip.x, tip.y);
    let dent_flat = world.needle.tip_radius_mm() / scale;
    let taper = DENT_TAPER_MM / scale;

    for c in 0..w {
        let s = (c as f64 - center_col) * scale;
        let p = scanline.point_at(s);
        if !vein.covers(p[0], p[1]) {
            continue;
        }
        let in_gap = gap_center.is_some_and(|g| (c as f64 - g).abs() <= gap_half);

        if !(tissue.phase.is_breached() && in_gap) {
            let mut deflection = 0.0;
            if tip_over_vein && matches!(tissue.phase, TissuePhase::Contact | TissuePhase::Deformed) {
                let d = (c as f64 - tip_col).abs();
                let profile = if d <= dent_flat { 1.0 } else { (1.0 - (d - dent_flat) / taper).max(0.0) };
                deflection = tissue.deflection_mm * profile;
            }
            let r_top = (top_z - (vein.depth_z - deflection)) / scale;
            draw_ridge(&mut buf, w, h, c, r_top);
        }
        if !(tissue.phase == TissuePhase::DoublePunctured && in_gap) {
            let r_bottom = (top_z - vein.bottom_z()) / scale;
            draw_ridge(&mut buf, w, h, c, r_bottom);
        }
    }

    draw_disc(&mut buf, w, h, tip_col, tip_row, blob_r);

    Ok(BScanFrame { image: GrayImage::from_f32(w, h, &buf), scale_mm_per_px: scale, scanline: *scanline, top_z, t: world.t })
}

fn draw_ridge(buf: &mut [f32], w: usize, h: usize, c: usize, r_top: f64) {
    let r_bot = r_top + RIDGE_THICKNESS_PX;
    let start = (r_top - 1.0).floor().max(0.0) as usize;
    let end = ((r_bot + 1.0).ceil() as usize).min(h);
    for r in start..end {
        let cov = interval_coverage(r as f64, r_top, r_bot) as f32;
        if cov > 0.0 {
            let p = &mut buf[r * w + c];
            *p = *p * (1.0 - cov) + palette::RIDGE * cov;
        }
    }
}

fn draw_disc(buf: &mut [f32], w: usize, h: usize, cx: f64, cy: f64, radius: f64) {
    let c0 = (cx - radius - 1.0).floor().max(0.0) as i64;
    let c1 = ((cx + radius + 1.0).ceil() as i64).min(w as i64 - 1);
    let r0 = (cy - radius - 1.0).floor().max(0.0) as i64;
    let r1 = ((cy + radius + 1.0).ceil() as i64).min(h as i64 - 1);
    let step = 1.0 / SUPERSAMPLE as f64;
    let r2 = radius * radius;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let mut hits = 0usize;
            for j in 0..SUPERSAMPLE {
                let py = r as f64 - 0.5 + (j as f64 + 0.5) * step - cy;
                for i in 0..SUPERSAMPLE {
                    let px = c as f64 - 0.5 + (i as f64 + 0.5) * step - cx;
                    if px * px + py * py <= r2 {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                let cov = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
                let p = &mut buf[r as usize * w + c as usize];
                *p = *p * (1.0 - cov) + palette::NEEDLE * cov;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{MotionCommand, NeedleModel, Physics, Pose3, VeinModel, VeinPreset};

    fn world(tip: Pose3) -> WorldState {
        let needle = NeedleModel { tip, ..NeedleModel::default() };
        WorldState::new(needle, VeinModel::preset(VeinPreset::Embryo), Physics::default(), 5).unwrap()
    }

    fn scan() -> Scanline {
        Scanline::across([1.0, 0.0], [0.0, 0.0])
    }

    #[test]
    fn scanline_far_from_tip_is_an_error() {
        let w = world(Pose3::new(5.0, 0.0, 1.0));
        let r = render_bscan(&w, &ImagingConfig::default(), &scan());
        assert!(matches!(r, Err(ImagingError::ScanlineMissesRoi { .. })));
    }

    #[test]
    fn free_phase_shows_two_intact_ridges() {
        let w = world(Pose3::new(0.0, 0.0, 1.0));
        let f = render_bscan(&w, &ImagingConfig::default(), &scan()).unwrap();
        // Top wall at z = 0: row 3.0 / 0.0357 = 84.03; the fully covered row is 85.
        let bottom_row = ((3.0 + 1.27) / 0.0357_f64 + 0.5).ceil() as usize;
        for c in 100..125 {
            assert!(f.image.get(c, 85) >= 170, "col {c}");
            assert!(f.image.get(c, bottom_row) >= 170, "col {c}");
        }
    }

    #[test]
    fn punctured_ridge_has_gap_at_tip_column() {
        let w = world(Pose3::new(0.0, 0.0, 0.05));
        let w = w.step(MotionCommand::ZStep { dz: -0.30 }, 0.1).unwrap();
        assert_eq!(w.tissue.phase, TissuePhase::Punctured);
        let f = render_bscan(&w, &ImagingConfig::default(), &scan()).unwrap();
        assert!(f.image.get(112, 85) < 90);
        assert!(f.image.get(100, 85) >= 170);
    }
}
