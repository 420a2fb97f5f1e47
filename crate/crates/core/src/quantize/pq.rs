//! Product quantization with asymmetric distance computation (ADC).
//!
//! A `4n`-dim vector is split into `n` 4-dim subvectors, each replaced by the
//! id of its nearest centroid, so a code is `n` bytes. At query time the
//! squared distance from every query subvector to every centroid is
//! tabulated once; a candidate's distance is then `n` table lookups.

use serde::{Deserialize, Serialize};

use super::codebook::{SubspaceCodebook, SubspaceTrainConfig};
use crate::error::{Error, Result};
use crate::math::sq_dist;

pub const PQ_MAGIC: &[u8; 4] = b"PQC1";
pub const PQ_SUB_DIM: usize = 4;
pub const DEFAULT_PQ_SUBSPACES: usize = 25;
pub const DEFAULT_PQ_CENTROIDS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook(SubspaceCodebook);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PqCode(pub Vec<u8>);

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    n: usize,
    k: usize,
    table: Vec<f32>,
}

impl PqCodebook {
    /// Trains `n` independent k-means quantizers over 4-dim subspaces.
    pub fn train(vectors: &[impl AsRef<[f32]>], n: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > 256 {
            return Err(Error::config(format!(
                "PQ centroid count {k} must be in 1..=256"
            )));
        }
        if let Some(v) = vectors.first() {
            if v.as_ref().len() != n * PQ_SUB_DIM {
                return Err(Error::config(format!(
                    "PQ with n={n} needs {}-dim input, got {}",
                    n * PQ_SUB_DIM,
                    v.as_ref().len()
                )));
            }
        }
        let config = SubspaceTrainConfig {
            seed,
            ..Default::default()
        };
        Ok(Self(SubspaceCodebook::train(
            vectors, n, k, PQ_SUB_DIM, &config,
        )?))
    }

    pub fn from_centroids(n: usize, k: usize, centroids: Vec<f32>) -> Result<Self> {
        if k > 256 {
            return Err(Error::config("PQ centroid count exceeds 256"));
        }
        Ok(Self(SubspaceCodebook::from_centroids(
            n, k, PQ_SUB_DIM, centroids,
        )?))
    }

    pub fn subspaces(&self) -> usize {
        self.0.n
    }

    pub fn centroids_per_subspace(&self) -> usize {
        self.0.k
    }

    pub fn source_dim(&self) -> usize {
        self.0.dim()
    }

    pub fn centroid(&self, subspace: usize, id: usize) -> &[f32] {
        self.0.centroid(subspace, id)
    }

    pub fn encode_into(&self, v: &[f32], out: &mut [u8]) -> Result<()> {
        self.0.check_dim(v)?;
        for (i, o) in out.iter_mut().enumerate().take(self.0.n) {
            *o = self.0.nearest_in(i, self.0.subvector(v, i)) as u8;
        }
        Ok(())
    }

    pub fn encode(&self, v: &[f32]) -> Result<PqCode> {
        let mut out = vec![0u8; self.0.n];
        self.encode_into(v, &mut out)?;
        Ok(PqCode(out))
    }

    pub fn check_code(&self, code: &[u8]) -> Result<()> {
        if code.len() != self.0.n {
            return Err(Error::dim(self.0.n, code.len()));
        }
        for (i, &id) in code.iter().enumerate() {
            if id as usize >= self.0.k {
                return Err(Error::CorruptCode {
                    subspace: i,
                    id,
                    k: self.0.k,
                });
            }
        }
        Ok(())
    }

    pub fn reconstruct(&self, code: &[u8]) -> Result<Vec<f32>> {
        self.check_code(code)?;
        let mut out = Vec::with_capacity(self.source_dim());
        for (i, &id) in code.iter().enumerate() {
            out.extend_from_slice(self.0.centroid(i, id as usize));
        }
        Ok(out)
    }

    pub fn distance_table(&self, query: &[f32]) -> Result<DistanceTable> {
        self.0.check_dim(query)?;
        let (n, k) = (self.0.n, self.0.k);
        let mut table = Vec::with_capacity(n * k);
        for i in 0..n {
            let q = self.0.subvector(query, i);
            table.extend(
                self.0
                    .book(i)
                    .chunks_exact(PQ_SUB_DIM)
                    .map(|c| sq_dist(q, c)),
            );
        }
        Ok(DistanceTable { n, k, table })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.write(PQ_MAGIC)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let cb = SubspaceCodebook::read(bytes, PQ_MAGIC)?;
        if cb.sub_dim != PQ_SUB_DIM || cb.k > 256 {
            return Err(Error::Format(format!(
                "PQ codebook with sub_dim {} k {}",
                cb.sub_dim, cb.k
            )));
        }
        Ok(Self(cb))
    }
}

impl DistanceTable {
    pub fn subspaces(&self) -> usize {
        self.n
    }

    pub fn centroids(&self) -> usize {
        self.k
    }

    pub fn get(&self, subspace: usize, id: usize) -> f32 {
        self.table[subspace * self.k + id]
    }

    /// Sum of the looked-up subspace distances: the exact squared distance
    /// from the query to the code's reconstruction.
    #[inline]
    pub fn adc_distance(&self, code: &[u8]) -> Result<f32> {
        if code.len() != self.n {
            return Err(Error::dim(self.n, code.len()));
        }
        let mut total = 0f32;
        for (i, &id) in code.iter().enumerate() {
            if id as usize >= self.k {
                return Err(Error::CorruptCode {
                    subspace: i,
                    id,
                    k: self.k,
                });
            }
            total += self.table[i * self.k + id as usize];
        }
        Ok(total)
    }
}

/// Storage footprint of one feature before and after PCA + PQ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub raw_dim: usize,
    pub reduced_dim: usize,
    pub raw_bytes: usize,
    pub pq_bytes: usize,
    pub ratio: f64,
}

impl CompressionReport {
    /// `raw_dim` f32 values against one byte per 4-dim subspace.
    pub fn new(raw_dim: usize, subspaces: usize, centroids: usize) -> Result<Self> {
        if centroids == 0 || centroids > 256 {
            return Err(Error::config("one-byte codes need 1..=256 centroids"));
        }
        if subspaces == 0 || subspaces * PQ_SUB_DIM > raw_dim {
            return Err(Error::config("PQ input dim cannot exceed the raw dim"));
        }
        let raw_bytes = raw_dim * 4;
        Ok(Self {
            raw_dim,
            reduced_dim: subspaces * PQ_SUB_DIM,
            raw_bytes,
            pq_bytes: subspaces,
            ratio: raw_bytes as f64 / subspaces as f64,
        })
    }

    pub fn display_ratio(&self) -> String {
        format!("{}x", self.ratio.round() as u64)
    }
}
