use std::collections::BTreeMap;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::PcaModel;
use crate::math::digest_hex;
use crate::quantize::codebook::SubspaceTrainConfig;
use crate::quantize::pq::{DEFAULT_PQ_CENTROIDS, DEFAULT_PQ_SUBSPACES, PQ_SUB_DIM};
use crate::quantize::vw::{DEFAULT_VW_BOOKS, DEFAULT_VW_VOCAB};
use crate::quantize::{PqCodebook, VisualWordCodebook};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FamilyRole {
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyConfig {
    pub name: String,
    pub dim: usize,
    pub role: FamilyRole,
    pub pq_subspaces: usize,
    pub pq_centroids: usize,
}

impl FamilyConfig {
    pub fn new(name: impl Into<String>, dim: usize, role: FamilyRole) -> Self {
        Self {
            name: name.into(),
            dim,
            role,
            pq_subspaces: DEFAULT_PQ_SUBSPACES,
            pq_centroids: DEFAULT_PQ_CENTROIDS,
        }
    }

    pub fn reduced_dim(&self) -> usize {
        self.pq_subspaces * PQ_SUB_DIM
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub shards: usize,
    pub families: Vec<FamilyConfig>,
    /// Keep unquantized vectors next to the PQ codes for exact Level-2
    /// distances.
    pub store_raw: bool,
    pub vw_books: usize,
    pub vw_vocab: usize,
    /// Visual words are assigned on this many leading principal components
    /// of the Level-1 family.
    pub vw_dim: usize,
    pub seed: u64,
    /// Upper bound on vectors used to train each model.
    pub train_sample: usize,
    pub kmeans_iters: usize,
}

impl IndexConfig {
    pub fn new(families: Vec<FamilyConfig>) -> Self {
        Self {
            shards: 1,
            families,
            store_raw: true,
            vw_books: DEFAULT_VW_BOOKS,
            vw_vocab: DEFAULT_VW_VOCAB,
            vw_dim: 64,
            seed: 0,
            train_sample: 20_000,
            kmeans_iters: 25,
        }
    }

    pub fn l1(&self) -> Result<&FamilyConfig> {
        let mut l1 = self.families.iter().filter(|f| f.role == FamilyRole::L1);
        match (l1.next(), l1.next()) {
            (Some(f), None) => Ok(f),
            _ => Err(Error::config("exactly one family must have role L1")),
        }
    }

    pub fn family(&self, name: &str) -> Option<&FamilyConfig> {
        self.families.iter().find(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shards == 0 {
            return Err(Error::config("shard count must be at least 1"));
        }
        let l1 = self.l1()?;
        let mut names = std::collections::HashSet::new();
        for f in &self.families {
            if !names.insert(&f.name) {
                return Err(Error::config(format!("family {} declared twice", f.name)));
            }
            if f.reduced_dim() > f.dim {
                return Err(Error::config(format!(
                    "family {}: PQ input {} exceeds feature dim {}",
                    f.name,
                    f.reduced_dim(),
                    f.dim
                )));
            }
            if f.pq_centroids == 0 || f.pq_centroids > 256 {
                return Err(Error::config(format!(
                    "family {}: PQ k must be in 1..=256",
                    f.name
                )));
            }
        }
        if self.vw_dim == 0 || self.vw_dim > l1.reduced_dim() || !self.vw_dim.is_multiple_of(self.vw_books) {
            return Err(Error::config(format!(
                "visual-word dim {} must divide by N={} and fit in the L1 reduced dim {}",
                self.vw_dim,
                self.vw_books,
                l1.reduced_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyModels {
    pub pca: PcaModel,
    pub pq: PqCodebook,
}

/// Every trained model an index depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub families: BTreeMap<String, FamilyModels>,
    pub vw: VisualWordCodebook,
    pub l1_family: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDigests {
    pub pca: BTreeMap<String, String>,
    pub pq: BTreeMap<String, String>,
    pub vw: String,
}

impl ModelDigests {
    /// One digest over all model digests; stamped into every shard file.
    pub fn combined(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.pca {
            s.push_str(&format!("pca:{k}:{v};"));
        }
        for (k, v) in &self.pq {
            s.push_str(&format!("pq:{k}:{v};"));
        }
        s.push_str(&format!("vw:{}", self.vw));
        digest_hex(s.as_bytes())
    }
}

/// Evenly strided subsample of at most `cap` items.
pub fn stride_sample<T: Clone>(items: &[T], cap: usize) -> Vec<T> {
    if items.len() <= cap {
        return items.to_vec();
    }
    (0..cap)
        .map(|i| items[i * items.len() / cap].clone())
        .collect()
}

impl Models {
    /// Trains PCA + PQ per family and the visual-word codebook on the
    /// Level-1 family. `samples` maps family name to training vectors.
    pub fn train(config: &IndexConfig, samples: &BTreeMap<String, Vec<Vec<f32>>>) -> Result<Self> {
        config.validate()?;
        let l1 = config.l1()?;
        let mut families = BTreeMap::new();
        let mut vw_train = Vec::new();
        for (i, f) in config.families.iter().enumerate() {
            let vectors = samples.get(&f.name).ok_or_else(|| {
                Error::config(format!("no training vectors for family {}", f.name))
            })?;
            let vectors = stride_sample(vectors, config.train_sample);
            let seed = config.seed.wrapping_add(1000 * i as u64);
            info!(
                "training PCA {} -> {} for {} on {} vectors",
                f.dim,
                f.reduced_dim(),
                f.name,
                vectors.len()
            );
            let pca = PcaModel::train(&vectors, f.reduced_dim())?;
            let reduced: Vec<Vec<f32>> = vectors
                .iter()
                .map(|v| pca.apply(v))
                .collect::<Result<_>>()?;
            info!(
                "training PQ n={} k={} for {}",
                f.pq_subspaces, f.pq_centroids, f.name
            );
            let pq = PqCodebook::train(&reduced, f.pq_subspaces, f.pq_centroids, seed)?;
            if f.name == l1.name {
                vw_train = reduced
                    .iter()
                    .map(|v| v[..config.vw_dim].to_vec())
                    .collect();
            }
            families.insert(f.name.clone(), FamilyModels { pca, pq });
        }
        info!(
            "training visual words N={} vocab={}",
            config.vw_books, config.vw_vocab
        );
        let vw = VisualWordCodebook::train_with(
            &vw_train,
            config.vw_books,
            config.vw_vocab,
            SubspaceTrainConfig {
                max_iters: config.kmeans_iters,
                seed: config.seed ^ 0x5157,
                restarts: 1,
            },
        )?;
        Ok(Self {
            families,
            vw,
            l1_family: l1.name.clone(),
        })
    }

    pub fn digests(&self) -> ModelDigests {
        ModelDigests {
            pca: self
                .families
                .iter()
                .map(|(k, m)| (k.clone(), digest_hex(&m.pca.to_bytes())))
                .collect(),
            pq: self
                .families
                .iter()
                .map(|(k, m)| (k.clone(), digest_hex(&m.pq.to_bytes())))
                .collect(),
            vw: digest_hex(&self.vw.to_bytes()),
        }
    }

    pub fn l1(&self) -> &FamilyModels {
        &self.families[&self.l1_family]
    }

    /// Reduced Level-1 vector and its visual words.
    pub fn l1_reduce(&self, v: &[f32]) -> Result<(Vec<f32>, crate::quantize::VisualWordSet)> {
        let reduced = self.l1().pca.apply(v)?;
        let words = self.vw.assign(&reduced[..self.vw.dim()])?;
        Ok((reduced, words))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let mut cfg = IndexConfig::new(vec![FamilyConfig::new("a", 128, FamilyRole::L1)]);
        assert!(cfg.validate().is_ok());
        cfg.vw_dim = 60;
        assert!(cfg.validate().is_err());
        cfg.vw_dim = 64;
        cfg.families
            .push(FamilyConfig::new("b", 64, FamilyRole::L2));
        assert!(cfg.validate().is_err(), "64 < 100");
        cfg.families[1].pq_subspaces = 16;
        assert!(cfg.validate().is_ok());
        cfg.families[1].role = FamilyRole::L1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stride_sample_caps() {
        let v: Vec<u32> = (0..10).collect();
        assert_eq!(stride_sample(&v, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(stride_sample(&v, 20).len(), 10);
    }
}
