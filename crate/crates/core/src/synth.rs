//! Seeded, cluster-structured synthetic corpora.
//!
//! Each cluster has a center, a low-rank basis and a keyword vocabulary.
//! A document is its cluster center plus a point on that basis plus small
//! isotropic noise, so nearest neighbours are well defined and mostly share
//! a cluster, category and keywords. Documents are generated lazily from
//! `(seed, id)`; nothing is materialized unless asked for.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{DominantColor, FeatureBundle};
use crate::index::{build_index, FamilyConfig, FamilyRole, ImageDoc, Index, IndexConfig, Models};
use crate::quantize::pq::PQ_SUB_DIM;

pub const PRIMARY_FAMILY: &str = "emb";
pub const AUX_FAMILY: &str = "aux";

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ra", "te", "su", "no", "vi", "ba", "de", "go", "pu", "ze", "fi", "ha", "jo",
];
const COMMON_WORDS: [&str; 6] = ["new", "sale", "classic", "modern", "home", "style"];
const KEYWORDS_PER_CLUSTER: usize = 6;
const QUERY_ID_BASE: u64 = 1 << 62;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub clusters: usize,
    pub docs_per_cluster: usize,
    pub dim: usize,
    /// Second embedding family; 0 disables it.
    pub aux_dim: usize,
    /// Rank of each cluster's basis.
    pub latent_dim: usize,
    /// Scale of the within-cluster (low-rank) variation.
    pub spread: f32,
    pub noise_sigma: f32,
    pub categories: usize,
    /// Every n-th document is a near copy of its predecessor; 0 disables.
    pub duplicate_every: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            clusters: 100,
            docs_per_cluster: 100,
            dim: 128,
            aux_dim: 0,
            latent_dim: 8,
            spread: 1.0,
            noise_sigma: 0.05,
            categories: 20,
            duplicate_every: 0,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn doc_count(&self) -> usize {
        self.clusters * self.docs_per_cluster
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.dim == 0 || self.latent_dim == 0 || self.categories == 0 {
            return Err(Error::config(
                "clusters, dim, latent_dim and categories must be positive",
            ));
        }
        if self.duplicate_every == 1 {
            return Err(Error::config("duplicate_every must be 0 or at least 2"));
        }
        Ok(())
    }
}

struct ClusterModel {
    center: Vec<f32>,
    /// `dim × latent`, row-major.
    basis: Vec<f32>,
    aux_center: Vec<f32>,
    aux_basis: Vec<f32>,
    keywords: Vec<String>,
    color: [f32; 3],
}

pub struct SyntheticCorpus {
    spec: CorpusSpec,
    clusters: Vec<ClusterModel>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let x: f32 = StandardNormal.sample(rng);
            x * scale
        })
        .collect()
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    (0..3).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

fn mix(seed: u64, id: u64) -> u64 {
    seed ^ id.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl SyntheticCorpus {
    pub fn new(spec: CorpusSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let basis_scale = spec.spread / (spec.dim as f32).sqrt();
        let aux_basis_scale = spec.spread / (spec.aux_dim.max(1) as f32).sqrt();
        let clusters = (0..spec.clusters)
            .map(|_| ClusterModel {
                center: normal_vec(&mut rng, spec.dim, 1.0),
                basis: normal_vec(&mut rng, spec.dim * spec.latent_dim, basis_scale),
                aux_center: normal_vec(&mut rng, spec.aux_dim, 1.0),
                aux_basis: normal_vec(&mut rng, spec.aux_dim * spec.latent_dim, aux_basis_scale),
                keywords: (0..KEYWORDS_PER_CLUSTER)
                    .map(|_| pseudo_word(&mut rng))
                    .collect(),
                color: [0, 1, 2].map(|_| rng.gen_range(0.0..255.0)),
            })
            .collect();
        Ok(Self { spec, clusters })
    }

    pub fn spec(&self) -> &CorpusSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.doc_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Clusters own contiguous id blocks, so strided samples cover all of them.
    pub fn cluster_of(&self, id: u64) -> usize {
        ((id / self.spec.docs_per_cluster.max(1) as u64) as usize).min(self.spec.clusters - 1)
    }

    pub fn category_name(&self, cluster: usize) -> String {
        format!("category{}", cluster % self.spec.categories)
    }

    pub fn keywords(&self, cluster: usize) -> &[String] {
        &self.clusters[cluster].keywords
    }

    fn sample(&self, rng_id: u64, cluster: usize) -> ImageDoc {
        let spec = &self.spec;
        let c = &self.clusters[cluster];
        let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, rng_id));
        let z = normal_vec(&mut rng, spec.latent_dim, 1.0);
        let project = |center: &[f32], basis: &[f32], rng: &mut ChaCha8Rng| -> Vec<f32> {
            center
                .iter()
                .enumerate()
                .map(|(i, &m)| {
                    let row = &basis[i * spec.latent_dim..(i + 1) * spec.latent_dim];
                    let lat: f32 = row.iter().zip(&z).map(|(b, z)| b * z).sum();
                    let n: f32 = StandardNormal.sample(rng);
                    m + lat + spec.noise_sigma * n
                })
                .collect()
        };
        let mut embeddings = BTreeMap::new();
        embeddings.insert(
            PRIMARY_FAMILY.to_string(),
            project(&c.center, &c.basis, &mut rng),
        );
        if spec.aux_dim > 0 {
            embeddings.insert(
                AUX_FAMILY.to_string(),
                project(&c.aux_center, &c.aux_basis, &mut rng),
            );
        }
        let mut words: Vec<&str> = c
            .keywords
            .choose_multiple(&mut rng, 3)
            .map(String::as_str)
            .collect();
        words.push(COMMON_WORDS.choose(&mut rng).unwrap());
        let rgb = c.color.map(|v| {
            let n: f32 = StandardNormal.sample(&mut rng);
            (v + 12.0 * n).clamp(0.0, 255.0)
        });
        let category = self.category_name(cluster);
        let features = FeatureBundle {
            embeddings,
            color_hist: Vec::new(),
            dominant_color: Some(DominantColor { rgb, weight: 0.5 }),
            category: Some(category.clone()),
            phash: Some(rng.gen()),
            digest: Some(rng.gen()),
            metadata_text: Some(words.join(" ")),
        };
        ImageDoc {
            image_id: rng_id,
            source_uri: format!("synthetic://{cluster}/{rng_id}"),
            metadata_text: words.join(" "),
            category: Some(category),
            features,
        }
    }

    /// Document `id` (0-based, below [`Self::len`]).
    pub fn doc(&self, id: u64) -> ImageDoc {
        let every = self.spec.duplicate_every as u64;
        if every >= 2 && id % every == every - 1 {
            return self.near_copy(id, id - 1);
        }
        self.sample(id, self.cluster_of(id))
    }

    fn near_copy(&self, id: u64, of: u64) -> ImageDoc {
        let mut doc = self.sample(of, self.cluster_of(of));
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.spec.seed ^ 0xd0b1e, id));
        doc.image_id = id;
        doc.source_uri = format!("synthetic://{}/{id}", self.cluster_of(of));
        for v in doc.features.embeddings.values_mut() {
            for x in v.iter_mut() {
                let n: f32 = StandardNormal.sample(&mut rng);
                *x += 1e-3 * n;
            }
        }
        // Either the same bytes or a re-encoded copy with a close phash.
        if rng.gen_bool(0.5) {
            doc.features.digest = Some(rng.gen());
            let flips = rng.gen_range(1..=3);
            let mut p = doc.features.phash.unwrap();
            for bit in rand::seq::index::sample(&mut rng, 64, flips) {
                p ^= 1 << bit;
            }
            doc.features.phash = Some(p);
        }
        doc
    }

    pub fn docs(&self) -> impl Iterator<Item = ImageDoc> + '_ {
        (0..self.len() as u64).map(|id| self.doc(id))
    }

    /// A fresh point from cluster `i mod clusters`; not part of the corpus.
    pub fn query(&self, i: u64) -> ImageDoc {
        self.sample(QUERY_ID_BASE + i, (i % self.spec.clusters as u64) as usize)
    }

    /// Every document's vector of `family`, by id.
    pub fn vectors(&self, family: &str) -> Vec<Vec<f32>> {
        self.docs()
            .map(|d| {
                d.features
                    .embeddings
                    .get(family)
                    .cloned()
                    .unwrap_or_default()
            })
            .collect()
    }

    /// Training sample of at most `cap` vectors per family, evenly strided.
    pub fn training_sample(&self, cap: usize) -> BTreeMap<String, Vec<Vec<f32>>> {
        let n = self.len();
        let take = n.min(cap);
        let mut out: BTreeMap<String, Vec<Vec<f32>>> = BTreeMap::new();
        for k in 0..take {
            let doc = self.doc((k * n / take) as u64);
            for (f, v) in doc.features.embeddings {
                out.entry(f).or_default().push(v);
            }
        }
        out
    }
}

impl SyntheticCorpus {
    /// Index config covering this corpus's families: the primary family is
    /// Level 1, the auxiliary one (if any) Level 2 with as many PQ subspaces
    /// as fit, up to the default.
    pub fn index_config(&self, shards: usize, store_raw: bool) -> IndexConfig {
        let mut families = vec![FamilyConfig::new(
            PRIMARY_FAMILY,
            self.spec.dim,
            FamilyRole::L1,
        )];
        if self.spec.aux_dim > 0 {
            let mut aux = FamilyConfig::new(AUX_FAMILY, self.spec.aux_dim, FamilyRole::L2);
            aux.pq_subspaces = aux.pq_subspaces.min(self.spec.aux_dim / PQ_SUB_DIM).max(1);
            families.push(aux);
        }
        let mut config = IndexConfig::new(families);
        config.shards = shards;
        config.store_raw = store_raw;
        config.seed = self.spec.seed;
        config
    }

    pub fn train_models(&self, config: &IndexConfig) -> Result<Models> {
        Models::train(config, &self.training_sample(config.train_sample))
    }

    pub fn build_index(&self, config: &IndexConfig) -> Result<Index> {
        let models = Arc::new(self.train_models(config)?);
        build_index(self.docs(), models, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::sq_dist;

    fn small() -> SyntheticCorpus {
        SyntheticCorpus::new(CorpusSpec {
            clusters: 5,
            docs_per_cluster: 20,
            dim: 16,
            aux_dim: 8,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn generation_is_reproducible() {
        let (a, b) = (small(), small());
        assert_eq!(a.doc(17), b.doc(17));
        assert_eq!(a.query(3), b.query(3));
        assert_ne!(a.doc(17), a.doc(18));
    }

    #[test]
    fn same_cluster_is_closer() {
        let c = small();
        let q = c.query(0);
        let qv = q.features.embedding(PRIMARY_FAMILY).unwrap();
        let same = sq_dist(qv, c.doc(5).features.embedding(PRIMARY_FAMILY).unwrap());
        let other = sq_dist(qv, c.doc(25).features.embedding(PRIMARY_FAMILY).unwrap());
        assert!(same < other);
        assert_eq!(c.doc(5).category, q.category);
    }

    #[test]
    fn planted_duplicates() {
        let c = SyntheticCorpus::new(CorpusSpec {
            duplicate_every: 4,
            clusters: 3,
            docs_per_cluster: 4,
            ..Default::default()
        })
        .unwrap();
        let (orig, copy) = (c.doc(2), c.doc(3));
        let (a, b) = (&orig.features, &copy.features);
        assert!(
            a.digest == b.digest
                || crate::feature::hamming(a.phash.unwrap(), b.phash.unwrap()) <= 3
        );
        assert_eq!(orig.metadata_text, copy.metadata_text);
    }
}
