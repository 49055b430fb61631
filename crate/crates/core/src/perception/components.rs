//! Connected-component labeling on binary masks.

use crate::imaging::GrayImage;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// Pixel coordinates `(x, y)`.
    pub pixels: Vec<(usize, usize)>,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.pixels.len().max(1) as f64;
        let (sx, sy) = self.pixels.iter().fold((0.0, 0.0), |(ax, ay), &(x, y)| (ax + x as f64, ay + y as f64));
        [sx / n, sy / n]
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)`.
    pub fn bbox(&self) -> (usize, usize, usize, usize) {
        self.pixels.iter().fold((usize::MAX, usize::MAX, 0, 0), |(x0, y0, x1, y1), &(x, y)| {
            (x0.min(x), y0.min(y), x1.max(x), y1.max(y))
        })
    }

    pub fn mean_intensity(&self, image: &GrayImage) -> f64 {
        let n = self.pixels.len().max(1) as f64;
        self.pixels.iter().map(|&(x, y)| f64::from(image.get(x, y))).sum::<f64>() / n
    }
}

/// 8-connected components of pixels with intensity `>= threshold`, in raster
/// order of their first pixel.
pub fn components_above(image: &GrayImage, threshold: u8) -> Vec<Component> {
    let (w, h) = (image.width, image.height);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || image.pixels[start] < threshold {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && image.pixels[j] >= threshold {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        out.push(Component { pixels });
    }
    out
}
