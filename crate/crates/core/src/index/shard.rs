use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::feature::DominantColor;
use crate::quantize::WordId;

/// Per-document record kept in the metadata store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocMeta {
    pub image_id: u64,
    pub source_uri: String,
    pub metadata_text: String,
    pub category: Option<String>,
    pub phash: Option<u64>,
    pub digest: Option<u128>,
    pub dominant_color: Option<DominantColor>,
}

/// Fixed-size per-document storage for one feature family.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyStore {
    pub(crate) subspaces: usize,
    pub(crate) dim: usize,
    pub(crate) code_present: Vec<bool>,
    pub(crate) codes: Vec<u8>,
    pub(crate) raw: Option<RawStore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawStore {
    pub(crate) present: Vec<bool>,
    pub(crate) values: Vec<f32>,
}

impl FamilyStore {
    pub fn code(&self, pos: usize) -> Option<&[u8]> {
        self.code_present[pos]
            .then(|| &self.codes[pos * self.subspaces..(pos + 1) * self.subspaces])
    }

    pub fn raw(&self, pos: usize) -> Option<&[f32]> {
        let raw = self.raw.as_ref()?;
        raw.present[pos].then(|| &raw.values[pos * self.dim..(pos + 1) * self.dim])
    }

    pub fn has_raw(&self) -> bool {
        self.raw.is_some()
    }
}

/// One partition of the index. Documents are stored in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub(crate) id: u32,
    pub(crate) ids: Vec<u64>,
    pub(crate) positions: HashMap<u64, u32>,
    pub(crate) postings: HashMap<WordId, Vec<u64>>,
    pub(crate) families: BTreeMap<String, FamilyStore>,
    pub(crate) meta: Vec<DocMeta>,
}

impl Shard {
    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn doc_count(&self) -> usize {
        self.ids.len()
    }

    pub fn doc_ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn posting_count(&self) -> usize {
        self.postings.len()
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.positions.get(&id).map(|&p| p as usize)
    }

    /// Sorted ids of the documents carrying `word`; empty when absent.
    pub fn postings_lookup(&self, word: WordId) -> &[u64] {
        self.postings.get(&word).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn words(&self) -> impl Iterator<Item = (WordId, &[u64])> {
        self.postings.iter().map(|(w, ids)| (*w, ids.as_slice()))
    }

    pub fn family(&self, name: &str) -> Option<&FamilyStore> {
        self.families.get(name)
    }

    pub fn meta(&self, pos: usize) -> &DocMeta {
        &self.meta[pos]
    }
}
