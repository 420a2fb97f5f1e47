//! Collapses exact and near-duplicate results.

use std::collections::HashMap;

use crate::feature::hamming;

use super::RankedResult;

pub const DEFAULT_PHASH_THRESHOLD: u32 = 6;

/// What duplicate detection looks at for one result.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DedupKey {
    pub digest: Option<u128>,
    pub phash: Option<u64>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    /// Keeps the smaller index as root, i.e. the better-ranked result.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// All pairs `(i, j)`, `i < j`, whose phash distance is `<= threshold`.
///
/// Splitting the 64 bits into `threshold + 1` chunks, two hashes within the
/// threshold agree exactly on at least one chunk, so only pairs sharing a
/// chunk value are compared.
fn near_pairs(keys: &[DedupKey], threshold: u32) -> Vec<(usize, usize)> {
    let hashes: Vec<(usize, u64)> = keys
        .iter()
        .enumerate()
        .filter_map(|(i, k)| k.phash.map(|p| (i, p)))
        .collect();
    let mut pairs = Vec::new();
    if threshold >= 63 {
        for (x, &(i, a)) in hashes.iter().enumerate() {
            for &(j, b) in &hashes[x + 1..] {
                if hamming(a, b) <= threshold {
                    pairs.push((i, j));
                }
            }
        }
        return pairs;
    }
    let chunks = threshold as usize + 1;
    let width = 64 / chunks;
    let mut seen = std::collections::HashSet::new();
    for c in 0..chunks {
        let lo = c * width;
        let bits = if c + 1 == chunks { 64 - lo } else { width };
        let mask = if bits == 64 {
            u64::MAX
        } else {
            (1u64 << bits) - 1
        };
        let mut keyed: Vec<(u64, usize, u64)> = hashes
            .iter()
            .map(|&(i, p)| ((p >> lo) & mask, i, p))
            .collect();
        keyed.sort_unstable();
        for run in keyed.chunk_by(|a, b| a.0 == b.0) {
            for (x, &(_, i, a)) in run.iter().enumerate() {
                for &(_, j, b) in &run[x + 1..] {
                    if hamming(a, b) <= threshold && seen.insert((i.min(j), i.max(j))) {
                        pairs.push((i.min(j), i.max(j)));
                    }
                }
            }
        }
    }
    pairs
}

/// Groups results linked by an equal digest or phash distance `<= threshold`
/// (transitively) and keeps the first, highest-scored member of each group.
/// `results` must already be in rank order; `keys` is aligned with it.
pub fn dedup_postprocess(
    results: Vec<RankedResult>,
    keys: &[DedupKey],
    threshold: u32,
) -> Vec<RankedResult> {
    assert_eq!(results.len(), keys.len());
    let n = results.len();
    let mut uf = UnionFind((0..n).collect());
    let mut by_digest: HashMap<u128, usize> = HashMap::new();
    for (i, k) in keys.iter().enumerate() {
        if let Some(d) = k.digest {
            match by_digest.get(&d) {
                Some(&first) => uf.union(first, i),
                None => {
                    by_digest.insert(d, i);
                }
            }
        }
    }
    for (i, j) in near_pairs(keys, threshold) {
        uf.union(i, j);
    }
    let mut group_size = vec![0usize; n];
    for i in 0..n {
        let r = uf.find(i);
        group_size[r] += 1;
    }
    results
        .into_iter()
        .enumerate()
        .filter_map(|(i, mut r)| {
            (uf.find(i) == i).then(|| {
                if group_size[i] > 1 {
                    r.dedup_group = Some(r.doc_id);
                }
                r
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(doc_id: u64, score: f64) -> RankedResult {
        RankedResult {
            doc_id,
            score,
            l1_distance: 0.0,
            source_uri: String::new(),
            metadata_text: String::new(),
            dedup_group: None,
        }
    }

    #[test]
    fn identical_digest_collapses() {
        let rs = vec![result(1, 2.0), result(2, 1.0)];
        let keys = [
            DedupKey {
                digest: Some(7),
                phash: None,
            },
            DedupKey {
                digest: Some(7),
                phash: None,
            },
        ];
        let out = dedup_postprocess(rs, &keys, DEFAULT_PHASH_THRESHOLD);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].doc_id, 1);
        assert_eq!(out[0].dedup_group, Some(1));
    }

    #[test]
    fn chunked_pairs_match_all_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let base: u64 = rng.gen();
        let keys: Vec<DedupKey> = (0..200)
            .map(|_| {
                let mut p = base;
                for _ in 0..rng.gen_range(0..12) {
                    p ^= 1 << rng.gen_range(0..64);
                }
                DedupKey {
                    digest: None,
                    phash: Some(p),
                }
            })
            .collect();
        for t in [0, 3, 6, 10, 63] {
            let mut got = near_pairs(&keys, t);
            got.sort_unstable();
            let mut want = Vec::new();
            for i in 0..keys.len() {
                for j in i + 1..keys.len() {
                    if hamming(keys[i].phash.unwrap(), keys[j].phash.unwrap()) <= t {
                        want.push((i, j));
                    }
                }
            }
            assert_eq!(got, want, "threshold {t}");
        }
    }

    #[test]
    fn phash_threshold_is_inclusive() {
        let at = 0b11_1111u64;
        let beyond = 0b111_1111u64;
        let keys = |p| {
            [
                DedupKey {
                    digest: None,
                    phash: Some(0),
                },
                DedupKey {
                    digest: None,
                    phash: Some(p),
                },
            ]
        };
        assert_eq!(
            dedup_postprocess(vec![result(1, 2.0), result(2, 1.0)], &keys(at), 6).len(),
            1
        );
        assert_eq!(
            dedup_postprocess(vec![result(1, 2.0), result(2, 1.0)], &keys(beyond), 6).len(),
            2
        );
    }
}
