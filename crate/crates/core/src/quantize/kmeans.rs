//! Lloyd's k-means with k-means++ seeding.

use std::collections::HashSet;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{nearest, sq_dist, Soa4};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Stop once the relative distortion improvement falls to this value.
    pub tolerance: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: 25,
            seed,
            restarts: 1,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// `k × dim`, row-major.
    pub centroids: Vec<f32>,
    pub dim: usize,
    /// Mean squared distance from each point to its centroid.
    pub distortion: f64,
    pub assignments: Vec<u32>,
    /// Distortion after every assignment step of the winning run.
    pub history: Vec<f64>,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }
}

fn count_distinct_up_to(points: &[f32], dim: usize, limit: usize) -> usize {
    let mut seen = HashSet::new();
    for p in points.chunks_exact(dim) {
        let key: Vec<u32> = p.iter().map(|v| (v + 0.0).to_bits()).collect();
        seen.insert(key);
        if seen.len() >= limit {
            break;
        }
    }
    seen.len()
}

/// Clusters `points` (flat, `dim` values each). If there are fewer distinct
/// points than `k`, `k` is reduced to the distinct count.
pub fn kmeans(points: &[f32], dim: usize, config: &KMeansConfig) -> Result<KMeansResult> {
    if dim == 0 || points.is_empty() {
        return Err(Error::config("k-means needs at least one point"));
    }
    if !points.len().is_multiple_of(dim) {
        return Err(Error::dim(dim, points.len() % dim));
    }
    if config.k == 0 || config.max_iters == 0 {
        return Err(Error::config("k-means needs k >= 1 and max_iters >= 1"));
    }
    let distinct = count_distinct_up_to(points, dim, config.k);
    let k = config.k.min(distinct);
    if k < config.k {
        warn!(
            "k-means: only {distinct} distinct points, reducing k from {} to {k}",
            config.k
        );
    }

    let mut best: Option<KMeansResult> = None;
    for restart in 0..config.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(restart as u64));
        let run = lloyd(points, dim, k, config, &mut rng);
        if best
            .as_ref()
            .is_none_or(|b| run.distortion < b.distortion)
        {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

fn plus_plus_init(points: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = points
        .chunks_exact(dim)
        .map(|p| sq_dist(p, &centroids[..dim]) as f64)
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // Float slack can land on a zero-weight tail point.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap();
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = &points[pick * dim..(pick + 1) * dim];
        centroids.extend_from_slice(c);
        for (w, p) in d2.iter_mut().zip(points.chunks_exact(dim)) {
            *w = w.min(sq_dist(p, c) as f64);
        }
    }
    centroids
}

fn assign(
    points: &[f32],
    dim: usize,
    centroids: &[f32],
    assignments: &mut [u32],
    dists: &mut [f32],
) -> f64 {
    let mut total = 0f64;
    let soa = (dim == 4).then(|| Soa4::new(centroids));
    for ((p, a), d) in points
        .chunks_exact(dim)
        .zip(assignments.iter_mut())
        .zip(dists.iter_mut())
    {
        let (j, dist) = match &soa {
            Some(s) => s.nearest([p[0], p[1], p[2], p[3]]),
            None => nearest(centroids, dim, p),
        };
        *a = j as u32;
        *d = dist;
        total += dist as f64;
    }
    total / assignments.len() as f64
}

fn lloyd(
    points: &[f32],
    dim: usize,
    k: usize,
    config: &KMeansConfig,
    rng: &mut ChaCha8Rng,
) -> KMeansResult {
    let n = points.len() / dim;
    let mut centroids = plus_plus_init(points, dim, k, rng);
    let mut assignments = vec![0u32; n];
    let mut dists = vec![0f32; n];
    let mut distortion = assign(points, dim, &centroids, &mut assignments, &mut dists);
    let mut history = vec![distortion];

    for _ in 0..config.max_iters {
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.chunks_exact(dim).zip(&assignments) {
            let a = a as usize;
            counts[a] += 1;
            for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
                *s += v as f64;
            }
        }
        let mut taken = HashSet::new();
        for j in 0..k {
            if counts[j] > 0 {
                for (c, s) in centroids[j * dim..(j + 1) * dim]
                    .iter_mut()
                    .zip(&sums[j * dim..(j + 1) * dim])
                {
                    *c = (*s / counts[j] as f64) as f32;
                }
            } else {
                // Re-seed from the point farthest from its centroid.
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .fold(None, |b: Option<usize>, i| match b {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    })
                    .unwrap();
                taken.insert(far);
                dists[far] = 0.0;
                centroids[j * dim..(j + 1) * dim]
                    .copy_from_slice(&points[far * dim..(far + 1) * dim]);
            }
        }
        let prev = distortion;
        distortion = assign(points, dim, &centroids, &mut assignments, &mut dists);
        history.push(distortion);
        if prev - distortion <= config.tolerance * prev {
            break;
        }
    }
    KMeansResult {
        centroids,
        dim,
        distortion,
        assignments,
        history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = [0.0f32, 0.0, 2.0, 0.0, 4.0, 6.0];
        let r = kmeans(&pts, 2, &KMeansConfig::new(1, 3)).unwrap();
        assert!((r.centroid(0)[0] - 2.0).abs() < 1e-6 && (r.centroid(0)[1] - 2.0).abs() < 1e-6);
        // total variance: var_x = 8/3, var_y = 8
        assert!((r.distortion - (8.0 / 3.0 + 8.0)).abs() < 1e-5);
    }

    #[test]
    fn k_equals_distinct_points_gives_zero_distortion() {
        let pts = [1.0f32, 1.0, 5.0, 5.0, 9.0, -3.0, 1.0, 1.0];
        let r = kmeans(&pts, 2, &KMeansConfig::new(3, 0)).unwrap();
        assert_eq!(r.distortion, 0.0);
        let mut cs: Vec<(i32, i32)> = (0..3)
            .map(|j| (r.centroid(j)[0] as i32, r.centroid(j)[1] as i32))
            .collect();
        cs.sort();
        assert_eq!(cs, vec![(1, 1), (5, 5), (9, -3)]);
    }

    #[test]
    fn k_reduced_when_too_few_distinct_points() {
        let pts = [2.0f32; 10];
        let r = kmeans(&pts, 1, &KMeansConfig::new(4, 0)).unwrap();
        assert_eq!(r.k(), 1);
    }

    #[test]
    fn errors() {
        assert!(kmeans(&[], 2, &KMeansConfig::new(1, 0)).is_err());
        assert!(kmeans(&[1.0], 1, &KMeansConfig::new(0, 0)).is_err());
    }

    #[test]
    fn deterministic_and_monotone() {
        let pts: Vec<f32> = (0..600)
            .map(|i| ((i * 7919) % 1000) as f32 / 100.0)
            .collect();
        let cfg = KMeansConfig {
            k: 8,
            max_iters: 50,
            seed: 11,
            restarts: 3,
            tolerance: 0.0,
        };
        let a = kmeans(&pts, 3, &cfg).unwrap();
        let b = kmeans(&pts, 3, &cfg).unwrap();
        assert_eq!(a.centroids, b.centroids);
        for w in a.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", a.history);
        }
    }
}
