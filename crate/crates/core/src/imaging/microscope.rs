use std::cell::RefCell;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};

use super::{palette, GrayImage, ImagingConfig, MicroscopeFrame, SUPERSAMPLE};
use crate::rng::{rng_for, stream};
use crate::world::WorldState;

/// Orthographic top-down view: speckled background, flat vein band, and the
/// needle shaft as an anti-aliased band from its entry point to the tip.
pub fn render_microscope(world: &WorldState, cfg: &ImagingConfig) -> MicroscopeFrame {
    let (w, h) = (cfg.microscope_width, cfg.microscope_height);
    let scale = cfg.microscope_scale_mm_per_px;
    let origin = cfg.microscope_origin_for(world.vein.axis_point);

    let base = background(world, w, h, origin, scale);
    let mut image = GrayImage { width: w, height: h, pixels: base.pixels.to_vec() };
    draw_needle(&mut image, &base.exact, world, origin, scale);

    MicroscopeFrame { image, scale_mm_per_px: scale, origin, t: world.t }
}

/// Speckle and vein band before quantization, and quantized.
#[derive(Clone)]
struct Background {
    exact: Arc<[f32]>,
    pixels: Arc<[u8]>,
}

type BackgroundKey = [u64; 11];

const BACKGROUND_CACHE: usize = 4;

thread_local! {
    static BACKGROUNDS: RefCell<Vec<(BackgroundKey, Background)>> = const { RefCell::new(Vec::new()) };
}

/// Background speckle is a fixed texture of the tissue: one draw per seed,
/// shared by every frame of the same seed, frame geometry and vein.
fn background(world: &WorldState, w: usize, h: usize, origin: [f64; 2], scale: f64) -> Background {
    let vein = &world.vein;
    let key: BackgroundKey = [
        world.rng_seed,
        w as u64,
        h as u64,
        origin[0].to_bits(),
        origin[1].to_bits(),
        scale.to_bits(),
        vein.axis_point[0].to_bits(),
        vein.axis_point[1].to_bits(),
        vein.axis_dir[0].to_bits(),
        vein.axis_dir[1].to_bits(),
        vein.diameter_mm.to_bits(),
    ];
    BACKGROUNDS.with(|cache| {
        let mut cache = cache.borrow_mut();
        if let Some((_, b)) = cache.iter().find(|(k, _)| *k == key) {
            return b.clone();
        }
        let mut rng = rng_for(world.rng_seed, stream::MICROSCOPE, 0);
        let speckle = Normal::new(palette::BACKGROUND_MEAN, palette::BACKGROUND_SIGMA).expect("valid sigma");
        let mut exact = vec![0f32; w * h];
        for v in 0..h {
            let y = origin[1] + v as f64 * scale;
            for u in 0..w {
                let x = origin[0] + u as f64 * scale;
                // Draw speckle for every pixel so the stream does not depend on geometry.
                let s = speckle.sample(&mut rng).clamp(0.0, 255.0);
                exact[v * w + u] = if vein.covers(x, y) { palette::VEIN } else { s };
            }
        }
        let pixels: Arc<[u8]> = GrayImage::from_f32(w, h, &exact).pixels.into();
        let b = Background { exact: exact.into(), pixels };
        if cache.len() == BACKGROUND_CACHE {
            cache.remove(0);
        }
        cache.push((key, b.clone()));
        b
    })
}

fn draw_needle(image: &mut GrayImage, base: &[f32], world: &WorldState, origin: [f64; 2], scale: f64) {
    let (w, h) = (image.width, image.height);
    let needle = &world.needle;
    let tip = [(needle.tip.x - origin[0]) / scale, (needle.tip.y - origin[1]) / scale];
    let entry_mm = needle.entry_point_xy();
    let entry = [(entry_mm[0] - origin[0]) / scale, (entry_mm[1] - origin[1]) / scale];
    let half_width = needle.tip_radius_mm() / scale;

    let (dx, dy) = (tip[0] - entry[0], tip[1] - entry[1]);
    let len = dx.hypot(dy);
    if len <= 0.0 {
        return;
    }
    let a = [dx / len, dy / len];
    let n = [-a[1], a[0]];

    let pad = half_width + 1.0;
    let u0 = (entry[0].min(tip[0]) - pad).floor().max(0.0);
    let u1 = (entry[0].max(tip[0]) + pad).ceil().min(w as f64 - 1.0);
    let v0 = (entry[1].min(tip[1]) - pad).floor().max(0.0);
    let v1 = (entry[1].max(tip[1]) + pad).ceil().min(h as f64 - 1.0);
    if u0 > u1 || v0 > v1 {
        return;
    }

    let step = 1.0 / SUPERSAMPLE as f64;
    for v in v0 as usize..=v1 as usize {
        for u in u0 as usize..=u1 as usize {
            let mut hits = 0usize;
            for j in 0..SUPERSAMPLE {
                let py = v as f64 - 0.5 + (j as f64 + 0.5) * step;
                for i in 0..SUPERSAMPLE {
                    let px = u as f64 - 0.5 + (i as f64 + 0.5) * step;
                    let rx = px - entry[0];
                    let ry = py - entry[1];
                    let t = rx * a[0] + ry * a[1];
                    let s = rx * n[0] + ry * n[1];
                    if t >= 0.0 && t <= len && s.abs() <= half_width {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                let c = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
                let i = v * w + u;
                image.pixels[i] = (base[i] * (1.0 - c) + palette::NEEDLE * c).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{NeedleModel, Physics, Pose3, VeinModel, VeinPreset};

    fn world(tip: Pose3) -> WorldState {
        let needle = NeedleModel { tip, ..NeedleModel::default() };
        WorldState::new(needle, VeinModel::preset(VeinPreset::Embryo), Physics::default(), 11).unwrap()
    }

    #[test]
    fn renders_are_deterministic() {
        let w = world(Pose3::new(1.0, 0.5, 1.0));
        let cfg = ImagingConfig::default();
        assert_eq!(render_microscope(&w, &cfg), render_microscope(&w, &cfg));
    }

    #[test]
    fn needle_outside_view_leaves_vein_only() {
        let w = world(Pose3::new(-9.5, 9.5, 1.0));
        let cfg = ImagingConfig { microscope_width: 128, microscope_height: 128, ..ImagingConfig::default() };
        let f = render_microscope(&w, &cfg);
        assert!(f.image.pixels.iter().all(|&p| p < 200));
        // The vein band row through the axis is flat.
        let row = f.image.height / 2;
        assert!((0..f.image.width).all(|u| f.image.get(u, row) == 90));
    }

    #[test]
    fn tip_pixel_is_bright() {
        let w = world(Pose3::new(0.0, 0.0, 1.0));
        let cfg = ImagingConfig::default();
        let f = render_microscope(&w, &cfg);
        let px = f.mm_to_px([-0.1, 0.0]);
        assert!(f.image.get(px[0].round() as usize, px[1].round() as usize) > 200);
    }
}
