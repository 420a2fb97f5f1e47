//! Codebook machinery: k-means, product quantization and visual words.

pub mod codebook;
pub mod kmeans;
pub mod pq;
pub mod vw;

pub use self::kmeans::{kmeans, KMeansConfig, KMeansResult};
pub use self::pq::{CompressionReport, DistanceTable, PqCode, PqCodebook};
pub use self::vw::{VisualWordCodebook, VisualWordSet, WordId};
