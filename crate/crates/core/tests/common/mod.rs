//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Ranks with ties averaged, 1-based.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of the ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn gaussian(rows: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0f32, 1.0).unwrap();
    (0..rows)
        .map(|_| (0..dim).map(|_| n.sample(&mut rng)).collect())
        .collect()
}

pub fn sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
}

use std::sync::Arc;

use vsearch_core::index::Index;
use vsearch_core::rank::LinearScorer;
use vsearch_core::retrieve::{Engine, Query};
use vsearch_core::synth::{CorpusSpec, SyntheticCorpus, PRIMARY_FAMILY};

pub fn corpus(clusters: usize, docs_per_cluster: usize, seed: u64) -> SyntheticCorpus {
    SyntheticCorpus::new(CorpusSpec {
        clusters,
        docs_per_cluster,
        seed,
        ..CorpusSpec::default()
    })
    .unwrap()
}

/// Engine ranking by exact primary-family distance.
pub fn engine(index: Arc<Index>) -> Engine {
    let scorer = LinearScorer::distance_baseline(
        &vsearch_core::rank::FeatureRegistry::for_manifest(index.manifest()),
        PRIMARY_FAMILY,
    )
    .unwrap();
    Engine::new(index, Arc::new(scorer)).unwrap()
}

pub fn query(engine: &Engine, corpus: &SyntheticCorpus, i: u64, top_k: usize) -> Query {
    let mut q = Query::new(corpus.query(i).features, engine.default_cascade());
    q.top_k = top_k;
    q
}

pub fn ids(results: &[vsearch_core::retrieve::RankedResult]) -> Vec<u64> {
    results.iter().map(|r| r.doc_id).collect()
}
