//! NDCG@k with gain `2^grade - 1` and discount `1 / log2(rank + 1)`.

use std::collections::HashMap;

use crate::error::{Error, Result};

fn gain(grade: u8) -> f64 {
    (2f64).powi(grade as i32) - 1.0
}

pub fn dcg_at_k(grades: &[u8], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of grades listed in ranked order. The ideal ordering is the same
/// grades sorted descending; an all-zero list scores 1.
pub fn ndcg_from_grades(grades: &[u8], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::config("NDCG cutoff k must be at least 1"));
    }
    let mut ideal = grades.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg_at_k(grades, k) / idcg)
}

/// NDCG@k of a ranked id list; ids without a label count as grade 0.
pub fn ndcg_at_k(ranked: &[u64], labels: &HashMap<u64, u8>, k: usize) -> Result<f64> {
    let grades: Vec<u8> = ranked
        .iter()
        .map(|id| labels.get(id).copied().unwrap_or(0))
        .collect();
    ndcg_from_grades(&grades, k)
}
