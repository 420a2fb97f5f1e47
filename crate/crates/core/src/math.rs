//! Small dense-vector helpers shared by the quantizers and rankers.

#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f32]) -> f32 {
    dot(a, a).sqrt()
}

/// Index of the nearest row in a flat `rows × dim` centroid block. Ties go to
/// the lowest index.
#[inline]
pub fn nearest(centroids: &[f32], dim: usize, v: &[f32]) -> (usize, f32) {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, v);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d)
}

const LANES: usize = 8;

/// Four-dimensional centroids stored component-major, padded to a multiple
/// of the lane width, for branch-free nearest-centroid scans.
#[derive(Debug, Clone, PartialEq)]
pub struct Soa4 {
    k: usize,
    cols: [Vec<f32>; 4],
}

impl Soa4 {
    pub fn new(flat: &[f32]) -> Self {
        let k = flat.len() / 4;
        let padded = k.div_ceil(LANES) * LANES;
        let cols = [0, 1, 2, 3].map(|d| {
            let mut c: Vec<f32> = flat.chunks_exact(4).map(|r| r[d]).collect();
            c.resize(padded, f32::INFINITY);
            c
        });
        Self { k, cols }
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    /// Nearest centroid and its squared distance; ties go to the lowest id.
    #[inline]
    pub fn nearest(&self, v: [f32; 4]) -> (usize, f32) {
        let mut best = [f32::INFINITY; LANES];
        let mut best_j = [0u32; LANES];
        let [xs, ys, zs, ws] = &self.cols;
        for (block, (((x, y), z), w)) in xs
            .chunks_exact(LANES)
            .zip(ys.chunks_exact(LANES))
            .zip(zs.chunks_exact(LANES))
            .zip(ws.chunks_exact(LANES))
            .enumerate()
        {
            for l in 0..LANES {
                let (a, b, c, d) = (x[l] - v[0], y[l] - v[1], z[l] - v[2], w[l] - v[3]);
                let dist = (a * a + b * b) + (c * c + d * d);
                let j = (block * LANES + l) as u32;
                let better = dist < best[l];
                best[l] = if better { dist } else { best[l] };
                best_j[l] = if better { j } else { best_j[l] };
            }
        }
        let mut out = (best_j[0] as usize, best[0]);
        for l in 1..LANES {
            let j = best_j[l] as usize;
            if best[l] < out.1 || (best[l] == out.1 && j < out.0) {
                out = (j, best[l]);
            }
        }
        if out.1 == f32::INFINITY {
            // Every distance overflowed; fall back to id 0 like the scalar scan.
            out = (0, f32::INFINITY);
        }
        out
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Hex SHA-256 prefix (32 hex chars) used to pin model files.
pub fn digest_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let out = Sha256::digest(bytes);
    out[..16].iter().map(|b| format!("{b:02x}")).collect()
}
