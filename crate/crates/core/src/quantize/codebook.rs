use crate::error::{Error, Result};
use crate::math::{nearest, Soa4};
use crate::quantize::kmeans::{kmeans, KMeansConfig};

/// `n` independent codebooks of `k` centroids over contiguous `sub_dim`-wide
/// slices of the input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceCodebook {
    pub(crate) n: usize,
    pub(crate) k: usize,
    pub(crate) sub_dim: usize,
    /// `n × k × sub_dim`.
    pub(crate) centroids: Vec<f32>,
    /// Per-book scan layout, only for four-dimensional subspaces.
    soa: Vec<Soa4>,
}

#[derive(Debug, Clone, Copy)]
pub struct SubspaceTrainConfig {
    pub max_iters: usize,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for SubspaceTrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 25,
            seed: 0,
            restarts: 1,
        }
    }
}

impl SubspaceCodebook {
    pub fn from_centroids(n: usize, k: usize, sub_dim: usize, centroids: Vec<f32>) -> Result<Self> {
        if n == 0 || k == 0 || sub_dim == 0 {
            return Err(Error::config("codebook shape must be non-zero"));
        }
        if centroids.len() != n * k * sub_dim {
            return Err(Error::dim(n * k * sub_dim, centroids.len()));
        }
        Ok(Self::assemble(n, k, sub_dim, centroids))
    }

    fn assemble(n: usize, k: usize, sub_dim: usize, centroids: Vec<f32>) -> Self {
        let soa = if sub_dim == 4 {
            centroids.chunks_exact(k * sub_dim).map(Soa4::new).collect()
        } else {
            Vec::new()
        };
        Self {
            n,
            k,
            sub_dim,
            centroids,
            soa,
        }
    }

    pub fn train(
        vectors: &[impl AsRef<[f32]>],
        n: usize,
        k: usize,
        sub_dim: usize,
        config: &SubspaceTrainConfig,
    ) -> Result<Self> {
        let dim = n * sub_dim;
        if vectors.len() < k {
            return Err(Error::config(format!(
                "need at least {k} training vectors, got {}",
                vectors.len()
            )));
        }
        let mut centroids = Vec::with_capacity(n * k * sub_dim);
        let mut sub = Vec::with_capacity(vectors.len() * sub_dim);
        for i in 0..n {
            sub.clear();
            for v in vectors {
                let v = v.as_ref();
                if v.len() != dim {
                    return Err(Error::dim(dim, v.len()));
                }
                sub.extend_from_slice(&v[i * sub_dim..(i + 1) * sub_dim]);
            }
            let cfg = KMeansConfig {
                k,
                max_iters: config.max_iters,
                seed: config.seed.wrapping_add(i as u64 * 7919),
                restarts: config.restarts,
                tolerance: 1e-4,
            };
            let result = kmeans(&sub, sub_dim, &cfg)?;
            centroids.extend_from_slice(&result.centroids);
            // Pad with copies of the first centroid when the subspace had
            // fewer distinct values than k; ties resolve to the lower id.
            for _ in result.k()..k {
                let first = result.centroid(0).to_vec();
                centroids.extend_from_slice(&first);
            }
        }
        Ok(Self::assemble(n, k, sub_dim, centroids))
    }

    pub fn dim(&self) -> usize {
        self.n * self.sub_dim
    }

    pub fn book(&self, i: usize) -> &[f32] {
        let len = self.k * self.sub_dim;
        &self.centroids[i * len..(i + 1) * len]
    }

    pub fn centroid(&self, i: usize, j: usize) -> &[f32] {
        let start = (i * self.k + j) * self.sub_dim;
        &self.centroids[start..start + self.sub_dim]
    }

    pub fn check_dim(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::dim(self.dim(), v.len()));
        }
        Ok(())
    }

    /// Nearest centroid of subspace `i` to `sub`; ties go to the lower id.
    #[inline]
    pub fn nearest_in(&self, i: usize, sub: &[f32]) -> usize {
        match self.soa.get(i) {
            Some(soa) => soa.nearest([sub[0], sub[1], sub[2], sub[3]]).0,
            None => nearest(self.book(i), self.sub_dim, sub).0,
        }
    }

    pub fn subvector<'v>(&self, v: &'v [f32], i: usize) -> &'v [f32] {
        &v[i * self.sub_dim..(i + 1) * self.sub_dim]
    }

    pub(crate) fn write(&self, magic: &[u8; 4]) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.centroids.len() * 4);
        out.extend_from_slice(magic);
        for v in [self.n, self.k, self.sub_dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for c in &self.centroids {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub(crate) fn read(bytes: &[u8], magic: &[u8; 4]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != magic {
            return Err(Error::Format(format!(
                "not a {} codebook",
                String::from_utf8_lossy(magic)
            )));
        }
        let word =
            |i: usize| u32::from_le_bytes(bytes[4 + i * 4..8 + i * 4].try_into().unwrap()) as usize;
        let (n, k, sub_dim) = (word(0), word(1), word(2));
        let expected = n
            .checked_mul(k)
            .and_then(|v| v.checked_mul(sub_dim))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Format("codebook shape overflow".into()))?;
        if bytes.len() - 16 != expected {
            return Err(Error::Format(format!(
                "codebook body has {} bytes, expected {expected}",
                bytes.len() - 16
            )));
        }
        let centroids = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_centroids(n, k, sub_dim, centroids)
    }
}
