//! The sharded retrieval index: visual-word posting lists plus per-shard
//! feature stores (PQ codes, optional raw vectors, metadata).

mod build;
mod models;
mod persist;
mod shard;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use self::build::build_index;
pub use self::models::{
    stride_sample, FamilyConfig, FamilyModels, FamilyRole, IndexConfig, ModelDigests, Models,
};
pub use self::persist::{load_index, save_index, MANIFEST_FILE};
pub use self::shard::{DocMeta, FamilyStore, Shard};

use crate::error::{Error, Result};
use crate::feature::FeatureBundle;
use crate::math::fnv1a64;
use crate::rank::text::TextIdf;

pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDoc {
    pub image_id: u64,
    pub source_uri: String,
    pub metadata_text: String,
    pub category: Option<String>,
    pub features: FeatureBundle,
}

/// Stable shard for an id: FNV-1a of its little-endian bytes, mod `shards`.
pub fn shard_assign(image_id: u64, shards: usize) -> usize {
    assert!(shards >= 1, "shard count must be positive");
    (fnv1a64(&image_id.to_le_bytes()) % shards as u64) as usize
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyEntry {
    pub name: String,
    pub dim: usize,
    pub role: FamilyRole,
    pub pq_subspaces: usize,
    pub pq_centroids: usize,
    pub raw_stored: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub shard_id: u32,
    pub doc_count: u64,
    pub posting_count: u64,
    pub model_digest: String,
    pub postings: FileEntry,
    pub codes: BTreeMap<String, FileEntry>,
    pub features: BTreeMap<String, FileEntry>,
    pub meta: FileEntry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub version: u32,
    pub shard_count: usize,
    pub digests: ModelDigests,
    pub families: Vec<FamilyEntry>,
    pub vw_books: usize,
    pub vw_vocab: usize,
    pub vw_dim: usize,
    pub built_at: u64,
    /// Filled in on save; empty for a purely in-memory index.
    #[serde(default)]
    pub shards: Vec<ShardManifest>,
}

impl IndexManifest {
    pub fn l1_family(&self) -> &str {
        self.families
            .iter()
            .find(|f| f.role == FamilyRole::L1)
            .map(|f| f.name.as_str())
            .unwrap_or_default()
    }

    pub fn family(&self, name: &str) -> Option<&FamilyEntry> {
        self.families.iter().find(|f| f.name == name)
    }
}

/// An immutable, fully loaded index.
#[derive(Debug)]
pub struct Index {
    pub(crate) manifest: IndexManifest,
    pub(crate) models: Arc<Models>,
    pub(crate) shards: Vec<Shard>,
    pub(crate) idf: TextIdf,
}

impl Index {
    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn models(&self) -> &Arc<Models> {
        &self.models
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn shard(&self, id: usize) -> &Shard {
        &self.shards[id]
    }

    pub fn idf(&self) -> &TextIdf {
        &self.idf
    }

    pub fn doc_count(&self) -> usize {
        self.shards.iter().map(Shard::doc_count).sum()
    }

    /// Shard and in-shard position of a document.
    pub fn locate(&self, image_id: u64) -> Option<(usize, usize)> {
        let s = shard_assign(image_id, self.shards.len());
        self.shards[s].position(image_id).map(|p| (s, p))
    }

    pub fn meta(&self, image_id: u64) -> Option<&DocMeta> {
        self.locate(image_id).map(|(s, p)| self.shards[s].meta(p))
    }

    /// Rebuilds a query bundle from what the index stores about a document.
    /// Families without raw storage are approximated by mapping the PQ
    /// reconstruction back through PCA.
    pub fn stored_bundle(&self, image_id: u64) -> Result<FeatureBundle> {
        let (s, p) = self.locate(image_id).ok_or(Error::UnknownDoc(image_id))?;
        let shard = &self.shards[s];
        let meta = shard.meta(p);
        let mut embeddings = BTreeMap::new();
        for (name, store) in &shard.families {
            let v = match store.raw(p) {
                Some(raw) => raw.to_vec(),
                None => match store.code(p) {
                    Some(code) => {
                        let m = &self.models.families[name];
                        m.pca.inverse(&m.pq.reconstruct(code)?)?
                    }
                    None => continue,
                },
            };
            embeddings.insert(name.clone(), v);
        }
        Ok(FeatureBundle {
            embeddings,
            color_hist: Vec::new(),
            dominant_color: meta.dominant_color,
            category: meta.category.clone(),
            phash: meta.phash,
            digest: meta.digest,
            metadata_text: Some(meta.metadata_text.clone()).filter(|t| !t.is_empty()),
        })
    }

    /// Fails unless `models` are exactly the ones this index was built with.
    pub fn check_models(&self, models: &Models) -> Result<()> {
        if models.digests() != self.manifest.digests {
            return Err(Error::Format(
                "model digests do not match the index manifest".into(),
            ));
        }
        Ok(())
    }
}
