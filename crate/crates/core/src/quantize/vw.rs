//! Visual-word codebooks for the Level-0 inverted index.
//!
//! The reduced feature is cut into `N` contiguous slices; each slice has its
//! own vocabulary, so every image gets exactly `N` words. A word is stored
//! as a 4-byte slot `(codebook << 16) | centroid`, which makes 16 words
//! exactly 64 bytes.

use serde::{Deserialize, Serialize};

use super::codebook::{SubspaceCodebook, SubspaceTrainConfig};
use crate::error::{Error, Result};

pub const VW_MAGIC: &[u8; 4] = b"VWC1";
pub const DEFAULT_VW_BOOKS: usize = 16;
pub const DEFAULT_VW_VOCAB: usize = 1024;
pub const MAX_VW_VOCAB: usize = 1 << 16;

/// Packed visual word: codebook index in the high 16 bits, centroid id in
/// the low 16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WordId(pub u32);

impl WordId {
    pub fn new(book: usize, centroid: usize) -> Self {
        debug_assert!(book < 1 << 16 && centroid < MAX_VW_VOCAB);
        WordId(((book as u32) << 16) | centroid as u32)
    }

    pub fn book(self) -> usize {
        (self.0 >> 16) as usize
    }

    pub fn centroid(self) -> usize {
        (self.0 & 0xffff) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualWordCodebook(SubspaceCodebook);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VisualWordSet {
    /// `words[i]` belongs to codebook `i`.
    pub words: Vec<WordId>,
}

impl VisualWordSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.0.to_le_bytes()).collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(4) {
            return Err(Error::Format(format!("word set of {} bytes", bytes.len())));
        }
        let words: Vec<WordId> = bytes
            .chunks_exact(4)
            .map(|c| WordId(u32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        for (i, w) in words.iter().enumerate() {
            if w.book() != i {
                return Err(Error::Format(format!(
                    "word {i} claims codebook {}",
                    w.book()
                )));
            }
        }
        Ok(Self { words })
    }

    /// Number of positions where both sets carry the same word.
    pub fn shared(&self, other: &VisualWordSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .filter(|(a, b)| a == b)
            .count()
    }
}

impl VisualWordCodebook {
    pub fn train(
        vectors: &[impl AsRef<[f32]>],
        books: usize,
        vocab: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::train_with(
            vectors,
            books,
            vocab,
            SubspaceTrainConfig {
                seed,
                ..Default::default()
            },
        )
    }

    pub fn train_with(
        vectors: &[impl AsRef<[f32]>],
        books: usize,
        vocab: usize,
        config: SubspaceTrainConfig,
    ) -> Result<Self> {
        if books == 0 || vocab == 0 || vocab > MAX_VW_VOCAB {
            return Err(Error::config(format!(
                "bad visual-word shape N={books} vocab={vocab}"
            )));
        }
        let dim = vectors.first().map(|v| v.as_ref().len()).unwrap_or(0);
        if dim == 0 || !dim.is_multiple_of(books) {
            return Err(Error::config(format!(
                "dim {dim} is not divisible by N={books}"
            )));
        }
        let sub_dim = dim / books;
        Ok(Self(SubspaceCodebook::train(
            vectors, books, vocab, sub_dim, &config,
        )?))
    }

    pub fn from_centroids(
        books: usize,
        vocab: usize,
        sub_dim: usize,
        centroids: Vec<f32>,
    ) -> Result<Self> {
        if vocab > MAX_VW_VOCAB {
            return Err(Error::config("vocabulary exceeds 65536"));
        }
        Ok(Self(SubspaceCodebook::from_centroids(
            books, vocab, sub_dim, centroids,
        )?))
    }

    pub fn books(&self) -> usize {
        self.0.n
    }

    pub fn vocab(&self) -> usize {
        self.0.k
    }

    pub fn sub_dim(&self) -> usize {
        self.0.sub_dim
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn centroid(&self, book: usize, id: usize) -> &[f32] {
        self.0.centroid(book, id)
    }

    pub fn assign(&self, v: &[f32]) -> Result<VisualWordSet> {
        self.0.check_dim(v)?;
        let words = (0..self.0.n)
            .map(|i| WordId::new(i, self.0.nearest_in(i, self.0.subvector(v, i))))
            .collect();
        Ok(VisualWordSet { words })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.write(VW_MAGIC)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let cb = SubspaceCodebook::read(bytes, VW_MAGIC)?;
        if cb.k > MAX_VW_VOCAB {
            return Err(Error::Format("vocabulary exceeds 65536".into()));
        }
        Ok(Self(cb))
    }
}
