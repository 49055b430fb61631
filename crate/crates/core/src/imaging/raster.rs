use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Row-major 8-bit grayscale buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn from_f32(width: usize, height: usize, data: &[f32]) -> Self {
        debug_assert_eq!(data.len(), width * height);
        let pixels = data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        Self { width, height, pixels }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Signed lookup; out-of-frame reads return `None`.
    #[inline]
    pub fn at(&self, x: i64, y: i64) -> Option<u8> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(self.get(x as usize, y as usize))
        }
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|&p| f64::from(p)).sum::<f64>() / self.pixels.len() as f64
    }

    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_pgm())
    }

    pub fn write_png(&self, path: &Path) -> Result<(), image::ImageError> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
    }

    /// 3x3 median filter with edge replication.
    pub fn median3(&self) -> GrayImage {
        let (w, h) = (self.width, self.height);
        let mut out = GrayImage::new(w, h);
        let px = &self.pixels;
        for y in 0..h {
            let ys = [y.saturating_sub(1), y, (y + 1).min(h - 1)];
            for x in 0..w {
                let xs = [x.saturating_sub(1), x, (x + 1).min(w - 1)];
                let mut win = [0u8; 9];
                for (j, &yy) in ys.iter().enumerate() {
                    for (i, &xx) in xs.iter().enumerate() {
                        win[j * 3 + i] = px[yy * w + xx];
                    }
                }
                out.pixels[y * w + x] = median9(win);
            }
        }
        out
    }
}

impl GrayImage {
    /// Maximum of `median3()` without building the filtered image. A window
    /// median reaches `v` once five of its (edge-replicated) pixels are at
    /// least `v`, so pixels are added brightest first until some window has five.
    pub fn median3_peak(&self) -> u8 {
        let (w, h) = (self.width, self.height);
        if w == 0 || h == 0 {
            return 0;
        }
        let mut order: Vec<usize> = (0..w * h).collect();
        let hist_floor = {
            let mut hist = [0usize; 256];
            for &v in &self.pixels {
                hist[v as usize] += 1;
            }
            // Enough bright pixels for any window to reach five.
            let mut acc = 0;
            let mut floor = 0u8;
            for v in (0..256).rev() {
                acc += hist[v];
                if acc >= 5 * w.max(h) + 64 {
                    floor = v as u8;
                    break;
                }
            }
            floor
        };
        order.retain(|&i| self.pixels[i] >= hist_floor);
        order.sort_unstable_by(|&a, &b| self.pixels[b].cmp(&self.pixels[a]).then(a.cmp(&b)));
        let mut counts = vec![0u8; w * h];
        for i in order {
            let (x, y) = (i % w, i / w);
            for (cy, my) in replicated_centers(y, h) {
                for (cx, mx) in replicated_centers(x, w) {
                    let c = &mut counts[cy * w + cx];
                    *c += my * mx;
                    if *c >= 5 {
                        return self.pixels[i];
                    }
                }
            }
        }
        self.median3().pixels.iter().copied().max().unwrap_or(0)
    }
}

/// Window centers whose edge-clamped 3-neighborhood includes index `p`,
/// with the number of times `p` appears in each.
fn replicated_centers(p: usize, n: usize) -> impl Iterator<Item = (usize, u8)> {
    (p.saturating_sub(1)..=(p + 1).min(n - 1)).map(move |c| {
        let m = [-1i64, 0, 1].iter().filter(|&&d| (c as i64 + d).clamp(0, n as i64 - 1) == p as i64).count();
        (c, m as u8)
    })
}

/// Median of nine values with a fixed exchange network.
fn median9(mut p: [u8; 9]) -> u8 {
    const NET: [(usize, usize); 19] = [
        (1, 2), (4, 5), (7, 8), (0, 1), (3, 4), (6, 7), (1, 2), (4, 5), (7, 8), (0, 3),
        (5, 8), (4, 7), (3, 6), (1, 4), (2, 5), (4, 7), (4, 2), (6, 4), (4, 2),
    ];
    for (a, b) in NET {
        let (lo, hi) = (p[a].min(p[b]), p[a].max(p[b]));
        p[a] = lo;
        p[b] = hi;
    }
    p[4]
}
