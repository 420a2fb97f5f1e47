//! Evaluation helpers: exact search, recall, latency percentiles, ranking
//! quality, and simulated human judgments over a synthetic corpus.

use std::collections::{BTreeMap, BinaryHeap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sq_dist;
use crate::rank::text::tokenize;
use crate::rank::{
    ndcg_from_grades, pairwise_to_listwise, PairwiseJudgment, RankingDataset, RowScorer,
};
use crate::retrieve::{Engine, Query};
use crate::synth::{SyntheticCorpus, AUX_FAMILY, PRIMARY_FAMILY};

#[derive(PartialEq)]
struct Entry(f32, u64);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Exact k nearest ids by squared distance, ties by id.
pub fn exact_top_k<'a>(
    query: &[f32],
    items: impl IntoIterator<Item = (u64, &'a [f32])>,
    k: usize,
) -> Vec<(u64, f32)> {
    if k == 0 {
        return Vec::new();
    }
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (id, v) in items {
        let d = sq_dist(query, v);
        if heap.len() < k {
            heap.push(Entry(d, id));
        } else if Entry(d, id) < *heap.peek().unwrap() {
            heap.pop();
            heap.push(Entry(d, id));
        }
    }
    let mut out: Vec<(u64, f32)> = heap.into_iter().map(|Entry(d, id)| (id, d)).collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out
}

/// Fraction of the true top `k` found in the first `k` retrieved ids.
pub fn recall_at_k(retrieved: &[u64], truth: &[u64], k: usize) -> f64 {
    let truth = &truth[..truth.len().min(k)];
    if truth.is_empty() {
        return 1.0;
    }
    let got = &retrieved[..retrieved.len().min(k)];
    truth.iter().filter(|t| got.contains(t)).count() as f64 / truth.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

impl LatencySummary {
    pub fn from_ms(samples: &[f64]) -> Self {
        Self {
            count: samples.len(),
            p50_ms: percentile(samples, 50.0),
            p95_ms: percentile(samples, 95.0),
            mean_ms: if samples.is_empty() {
                0.0
            } else {
                samples.iter().sum::<f64>() / samples.len() as f64
            },
            max_ms: samples.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Ranks each query's rows by `scorer` (ties by row order) and averages
/// NDCG@k over queries.
pub fn mean_ndcg(scorer: &dyn RowScorer, data: &RankingDataset, k: usize) -> Result<f64> {
    if data.groups.is_empty() {
        return Err(Error::config("no queries to evaluate"));
    }
    let mut total = 0.0;
    for g in &data.groups {
        let scores: Vec<f64> = data.rows[g.clone()]
            .iter()
            .map(|r| scorer.score(r))
            .collect::<Result<_>>()?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let grades: Vec<u8> = order.iter().map(|&i| data.labels[g.start + i]).collect();
        total += ndcg_from_grades(&grades, k)?;
    }
    Ok(total / data.groups.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBaseline {
    pub feature: String,
    /// +1 ranks high values first, -1 low values first.
    pub direction: f64,
    pub train_ndcg: f64,
    pub test_ndcg: f64,
}

/// Every slot used alone as a ranker, its direction chosen on `train`.
pub fn single_feature_baselines(
    names: &[String],
    train: &RankingDataset,
    test: &RankingDataset,
    k: usize,
) -> Result<Vec<FeatureBaseline>> {
    let mut out = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let mut best: Option<(f64, f64)> = None;
        for direction in [1.0, -1.0] {
            let mut weights = vec![0.0; names.len()];
            weights[i] = direction;
            let s = crate::rank::LinearScorer { weights, bias: 0.0 };
            let ndcg = mean_ndcg(&s, train, k)?;
            if best.is_none_or(|b| ndcg > b.1) {
                best = Some((direction, ndcg));
            }
        }
        let (direction, train_ndcg) = best.unwrap();
        let mut weights = vec![0.0; names.len()];
        weights[i] = direction;
        let test_ndcg = mean_ndcg(&crate::rank::LinearScorer { weights, bias: 0.0 }, test, k)?;
        out.push(FeatureBaseline {
            feature: name.clone(),
            direction,
            train_ndcg,
            test_ndcg,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgmentSpec {
    pub queries: usize,
    pub candidates_per_query: usize,
    pub pairs_per_query: usize,
    /// Logistic sharpness of simulated preferences.
    pub judge_sharpness: f64,
    pub seed: u64,
}

impl Default for JudgmentSpec {
    fn default() -> Self {
        Self {
            queries: 100,
            candidates_per_query: 30,
            pairs_per_query: 150,
            judge_sharpness: 4.0,
            seed: 0,
        }
    }
}

/// Candidate rows plus simulated pairwise judgments for a set of queries.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentSet {
    pub judgments: Vec<PairwiseJudgment>,
    /// Rows per query in shuffled order, keyed by query id.
    pub rows: BTreeMap<u64, Vec<(u64, Vec<f32>)>>,
    /// The hidden relevance the judges followed.
    pub relevance: HashMap<(u64, u64), f64>,
}

/// Hidden relevance: a fixed weighted sum of exact primary distance, exact
/// auxiliary distance and shared keyword count. Judges only ever see it
/// through noisy pairwise preferences.
pub fn hidden_relevance(corpus: &SyntheticCorpus, query: u64, doc: u64) -> f64 {
    let q = corpus.query(query);
    let d = corpus.doc(doc);
    let scale = |f: &str| {
        let (a, b) = (q.features.embedding(f), d.features.embedding(f));
        match (a, b) {
            (Some(a), Some(b)) => (sq_dist(a, b) as f64).sqrt() / (a.len() as f64).sqrt(),
            _ => 0.0,
        }
    };
    let shared = tokenize(&q.metadata_text)
        .intersection(&tokenize(&d.metadata_text))
        .count() as f64;
    -2.0 * scale(PRIMARY_FAMILY) - 2.0 * scale(AUX_FAMILY) + 0.5 * shared
}

/// Runs the cascade for `spec.queries` corpus queries, keeps the first
/// `candidates_per_query` Level-1 survivors and simulates Bradley–Terry
/// judges over random candidate pairs.
pub fn simulate_judgments(
    engine: &Engine,
    corpus: &SyntheticCorpus,
    spec: &JudgmentSpec,
) -> Result<JudgmentSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut set = JudgmentSet {
        judgments: Vec::new(),
        rows: BTreeMap::new(),
        relevance: HashMap::new(),
    };
    for qi in 0..spec.queries as u64 {
        let q = corpus.query(qi);
        let mut query = Query::new(q.features, engine.default_cascade());
        query.top_k = spec.candidates_per_query.max(1);
        query.cascade.l1_keep = query.cascade.l1_keep.max(query.top_k);
        let mut rows = engine.candidate_rows(&query, spec.candidates_per_query)?;
        if rows.len() < 2 {
            continue;
        }
        rows.shuffle(&mut rng);
        for (doc, _) in &rows {
            set.relevance
                .insert((qi, *doc), hidden_relevance(corpus, qi, *doc));
        }
        for _ in 0..spec.pairs_per_query {
            let (a, b) = {
                let pick = rand::seq::index::sample(&mut rng, rows.len(), 2);
                (rows[pick.index(0)].0, rows[pick.index(1)].0)
            };
            let diff = set.relevance[&(qi, a)] - set.relevance[&(qi, b)];
            let p = 1.0 / (1.0 + (-spec.judge_sharpness * diff).exp());
            let (winner, loser) = if rng.gen_bool(p) { (a, b) } else { (b, a) };
            set.judgments.push(PairwiseJudgment {
                query_id: qi,
                winner,
                loser,
                tie: false,
            });
        }
        set.rows
            .insert(qi, rows.into_iter().map(|(d, r)| (d, r.values)).collect());
    }
    Ok(set)
}

impl JudgmentSet {
    /// Graded dataset over the given queries, labels from the pairwise
    /// transform. Documents never judged get grade 0.
    pub fn dataset(&self, queries: &[u64]) -> Result<RankingDataset> {
        let labels: HashMap<(u64, u64), u8> = pairwise_to_listwise(&self.judgments)?
            .into_iter()
            .map(|l| ((l.query_id, l.doc_id), l.grade))
            .collect();
        let mut data = RankingDataset::default();
        for q in queries {
            let Some(rows) = self.rows.get(q) else {
                continue;
            };
            let grades = rows
                .iter()
                .map(|(d, _)| labels.get(&(*q, *d)).copied().unwrap_or(0))
                .collect();
            data.push_query(rows.iter().map(|(_, r)| r.clone()).collect(), grades);
        }
        Ok(data)
    }

    pub fn query_ids(&self) -> Vec<u64> {
        self.rows.keys().copied().collect()
    }
}
