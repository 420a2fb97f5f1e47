//! Grid color histogram and dominant color.

use serde::{Deserialize, Serialize};

use super::image::RawImage;
use crate::quantize::kmeans::{kmeans, KMeansConfig};

pub const GRID: usize = 4;
pub const BINS: usize = 12;
pub const HIST_DIM: usize = GRID * GRID * BINS;

const CHROMATIC_BINS: usize = 8;
const MIN_SATURATION: f32 = 0.2;
const MIN_VALUE: f32 = 0.2;
const MAX_DOMINANT_SAMPLES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominantColor {
    pub rgb: [f32; 3],
    pub weight: f32,
}

impl DominantColor {
    /// Euclidean RGB distance scaled to [0, 1].
    pub fn distance(&self, other: &DominantColor) -> f32 {
        let d: f32 = self
            .rgb
            .iter()
            .zip(&other.rgb)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (d.sqrt() / (255.0 * 3f32.sqrt())).min(1.0)
    }
}

fn rgb_to_hsv(p: [u8; 3]) -> (f32, f32, f32) {
    let [r, g, b] = p.map(|c| c as f32 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

/// Bin layout: 8 hue sectors of 45 degrees centred on red, then 4 gray
/// levels for low-saturation or dark pixels.
pub fn color_bin(p: [u8; 3]) -> usize {
    let (h, s, v) = rgb_to_hsv(p);
    if s < MIN_SATURATION || v < MIN_VALUE {
        CHROMATIC_BINS + ((v * 4.0) as usize).min(3)
    } else {
        (((h + 22.5) % 360.0) / 45.0) as usize % CHROMATIC_BINS
    }
}

/// 4×4 spatial grid × 12 color bins, L1-normalized over all pixels.
pub fn color_histogram(img: &RawImage) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut counts = vec![0u64; HIST_DIM];
    for y in 0..h {
        let cy = y * GRID / h;
        for x in 0..w {
            let cx = x * GRID / w;
            let bin = color_bin(img.pixel(x as u32, y as u32));
            counts[(cy * GRID + cx) * BINS + bin] += 1;
        }
    }
    let total = (w * h) as f64;
    counts.iter().map(|&c| (c as f64 / total) as f32).collect()
}

/// Heaviest cluster of a 3-means clustering over (a strided sample of) the
/// pixels.
pub fn dominant_color(img: &RawImage) -> DominantColor {
    let n = img.width() as usize * img.height() as usize;
    let stride = n.div_ceil(MAX_DOMINANT_SAMPLES).max(1);
    let points: Vec<f32> = img
        .pixels()
        .chunks_exact(3)
        .step_by(stride)
        .flat_map(|p| p.iter().map(|&c| c as f32))
        .collect();
    let count = points.len() / 3;
    let config = KMeansConfig {
        k: 3,
        max_iters: 20,
        seed: 0xd0c0,
        restarts: 1,
        tolerance: 1e-4,
    };
    let result = kmeans(&points, 3, &config).expect("non-empty pixel sample");
    let mut sizes = vec![0usize; result.k()];
    for &a in &result.assignments {
        sizes[a as usize] += 1;
    }
    // Largest cluster; ties go to the lowest index.
    let best = (0..sizes.len()).fold(0, |b, j| if sizes[j] > sizes[b] { j } else { b });
    let c = result.centroid(best);
    DominantColor {
        rgb: [c[0], c[1], c[2]],
        weight: sizes[best] as f32 / count as f32,
    }
}
