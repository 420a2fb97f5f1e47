//! 64-bit DCT perceptual hash.
//!
//! Luma is area-resampled to 32×32, a 2-D DCT-II is taken, and each of the
//! 8×8 lowest-frequency coefficients contributes one bit: set when the
//! coefficient exceeds the median of the 64.

use std::f64::consts::PI;

use super::image::RawImage;

const SIDE: usize = 32;
const LOW: usize = 8;

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

/// Area-weighted resampling weights from `src` samples onto `dst` samples.
fn resample_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|t| {
            let lo = t as f64 * scale;
            let hi = (t + 1) as f64 * scale;
            let mut w = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((s, overlap / scale));
                }
                s += 1;
            }
            w
        })
        .collect()
}

fn luma_32(img: &RawImage) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let luma: Vec<f64> = img
        .pixels()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    let wx = resample_weights(w, SIDE);
    let wy = resample_weights(h, SIDE);
    // Horizontal pass then vertical pass.
    let mut tmp = vec![0.0; h * SIDE];
    for y in 0..h {
        for (tx, ws) in wx.iter().enumerate() {
            tmp[y * SIDE + tx] = ws.iter().map(|&(sx, a)| a * luma[y * w + sx]).sum();
        }
    }
    let mut out = vec![0.0; SIDE * SIDE];
    for (ty, ws) in wy.iter().enumerate() {
        for tx in 0..SIDE {
            out[ty * SIDE + tx] = ws.iter().map(|&(sy, a)| a * tmp[sy * SIDE + tx]).sum();
        }
    }
    out
}

/// Low-frequency block of the unnormalized 2-D DCT-II of a 32×32 signal.
fn dct_low(signal: &[f64]) -> [f64; LOW * LOW] {
    let mut basis = [[0.0f64; SIDE]; LOW];
    for (u, row) in basis.iter_mut().enumerate() {
        for (x, b) in row.iter_mut().enumerate() {
            *b = (PI * (2 * x + 1) as f64 * u as f64 / (2 * SIDE) as f64).cos();
        }
    }
    // rows[y][u] = sum_x signal[y][x] * basis[u][x]
    let mut rows = vec![[0.0f64; LOW]; SIDE];
    for y in 0..SIDE {
        for u in 0..LOW {
            rows[y][u] = (0..SIDE).map(|x| signal[y * SIDE + x] * basis[u][x]).sum();
        }
    }
    let mut out = [0.0; LOW * LOW];
    for v in 0..LOW {
        for u in 0..LOW {
            out[v * LOW + u] = (0..SIDE).map(|y| rows[y][u] * basis[v][y]).sum();
        }
    }
    out
}

pub fn phash(img: &RawImage) -> u64 {
    let coeffs = dct_low(&luma_32(img));
    let mut sorted = coeffs;
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[LOW * LOW / 2 - 1] + sorted[LOW * LOW / 2]) / 2.0;
    coeffs
        .iter()
        .enumerate()
        .fold(0u64, |h, (i, &c)| if c > median { h | (1 << i) } else { h })
}
