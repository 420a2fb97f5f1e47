//! LambdaMART: gradient-boosted regression trees fitted to LambdaRank
//! gradients, each pair weighted by the |ΔNDCG| of swapping it.

use std::ops::Range;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ndcg::dcg_at_k;
use super::{FeatureRegistry, RowScorer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaMartConfig {
    pub trees: usize,
    pub leaves: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub seed: u64,
    /// Fraction of queries sampled per tree.
    pub query_subsample: f64,
}

impl Default for LambdaMartConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            leaves: 8,
            learning_rate: 0.1,
            min_leaf: 5,
            seed: 0,
            query_subsample: 1.0,
        }
    }
}

/// Rows grouped by query: `groups[q]` is the row range of query `q`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankingDataset {
    pub rows: Vec<Vec<f32>>,
    pub labels: Vec<u8>,
    pub groups: Vec<Range<usize>>,
}

impl RankingDataset {
    pub fn push_query(&mut self, rows: Vec<Vec<f32>>, labels: Vec<u8>) {
        assert_eq!(rows.len(), labels.len());
        let start = self.rows.len();
        self.rows.extend(rows);
        self.labels.extend(labels);
        self.groups.push(start..self.rows.len());
    }

    pub fn arity(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f32,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    /// Leaf value reached by `row`; `x <= threshold` goes left.
    pub fn evaluate(&self, row: &[f32]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { leaf } => return *leaf,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingModel {
    pub learning_rate: f64,
    pub arity: usize,
    pub feature_names: Vec<String>,
    pub registry_digest: String,
    pub trees: Vec<RegressionTree>,
}

impl RankingModel {
    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::config("ranking model has no trees"));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return Err(Error::config(format!("tree {t} is empty")));
            }
            if tree.max_feature().is_some_and(|f| f >= self.arity) {
                return Err(Error::config(format!(
                    "tree {t} references a feature beyond arity {}",
                    self.arity
                )));
            }
            for n in &tree.nodes {
                if let Node::Split { left, right, .. } = n {
                    if *left >= tree.nodes.len() || *right >= tree.nodes.len() {
                        return Err(Error::config(format!("tree {t} has a dangling child")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Sum over trees of `learning_rate × leaf`.
    pub fn model_score(&self, row: &[f32]) -> Result<f64> {
        if row.len() != self.arity {
            return Err(Error::dim(self.arity, row.len()));
        }
        Ok(self
            .trees
            .iter()
            .map(|t| self.learning_rate * t.evaluate(row))
            .sum())
    }

    /// The first `n` trees as a model of their own.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            trees: self.trees[..n.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let m: Self = serde_json::from_slice(bytes)?;
        m.validate()?;
        Ok(m)
    }

    pub fn check_registry(&self, registry: &FeatureRegistry) -> Result<()> {
        if registry.digest() != self.registry_digest {
            return Err(Error::config(format!(
                "ranking model expects features {:?}, index provides {:?}",
                self.feature_names,
                registry.names()
            )));
        }
        Ok(())
    }
}

impl RowScorer for RankingModel {
    fn score(&self, row: &[f32]) -> Result<f64> {
        self.model_score(row)
    }

    fn arity(&self) -> usize {
        self.arity
    }
}

/// Lambda gradients and Newton weights for one query.
fn query_lambdas(scores: &[f64], labels: &[u8], lambdas: &mut [f64], weights: &mut [f64]) {
    let m = scores.len();
    let mut sorted_labels = labels.to_vec();
    sorted_labels.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(&sorted_labels, m);
    if idcg == 0.0 {
        return;
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut rank = vec![0usize; m];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let discount = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let gain = |g: u8| (2f64).powi(g as i32) - 1.0;
    for i in 0..m {
        for j in 0..m {
            if labels[i] <= labels[j] {
                continue;
            }
            let delta = ((gain(labels[i]) - gain(labels[j]))
                * (discount(rank[i]) - discount(rank[j])))
            .abs()
                / idcg;
            let rho = 1.0 / (1.0 + (scores[i] - scores[j]).exp());
            lambdas[i] += rho * delta;
            lambdas[j] -= rho * delta;
            let h = rho * (1.0 - rho) * delta;
            weights[i] += h;
            weights[j] += h;
        }
    }
}

struct SplitChoice {
    feature: usize,
    threshold: f32,
    gain: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

fn best_split(
    rows: &[Vec<f32>],
    targets: &[f64],
    samples: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = samples.len();
    if n < 2 * min_leaf.max(1) {
        return None;
    }
    let total: f64 = samples.iter().map(|&i| targets[i]).sum();
    let base = total * total / n as f64;
    let arity = rows[samples[0]].len();
    let mut best: Option<(usize, f32, f64)> = None;
    let mut sorted = samples.to_vec();
    for f in 0..arity {
        sorted.sort_by(|&a, &b| rows[a][f].total_cmp(&rows[b][f]).then(a.cmp(&b)));
        let mut left_sum = 0.0;
        for (cut, &i) in sorted.iter().enumerate().take(n - 1) {
            left_sum += targets[i];
            let nl = cut + 1;
            let (lo, hi) = (rows[i][f], rows[sorted[cut + 1]][f]);
            if lo == hi || nl < min_leaf || n - nl < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let gain =
                left_sum * left_sum / nl as f64 + right_sum * right_sum / (n - nl) as f64 - base;
            if best.is_none_or(|b| gain > b.2) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some((f, threshold, gain));
            }
        }
    }
    let (feature, threshold, gain) = best?;
    if gain <= 1e-12 {
        return None;
    }
    let (left, right) = samples
        .iter()
        .partition(|&&i| rows[i][feature] <= threshold);
    Some(SplitChoice {
        feature,
        threshold,
        gain,
        left,
        right,
    })
}

/// Best-first growth to at most `max_leaves` leaves; leaf value is the Newton
/// step `Σλ / Σw`.
fn fit_tree(
    rows: &[Vec<f32>],
    lambdas: &[f64],
    weights: &[f64],
    samples: Vec<usize>,
    max_leaves: usize,
    min_leaf: usize,
) -> RegressionTree {
    let newton = |s: &[usize]| {
        let g: f64 = s.iter().map(|&i| lambdas[i]).sum();
        let h: f64 = s.iter().map(|&i| weights[i]).sum();
        if h > 1e-12 {
            g / h
        } else {
            0.0
        }
    };
    let mut nodes = vec![Node::Leaf {
        leaf: newton(&samples),
    }];
    // Open leaves: (node index, samples, pending split).
    let mut open: Vec<(usize, Option<SplitChoice>)> = Vec::new();
    let root_split = best_split(rows, lambdas, &samples, min_leaf);
    open.push((0, root_split));
    let mut leaves = 1;
    while leaves < max_leaves {
        // Highest-gain pending split; ties go to the earliest node.
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(k, (_, s))| s.as_ref().map(|s| (k, s.gain)))
            .fold(None, |b: Option<(usize, f64)>, c| match b {
                Some(b) if b.1 >= c.1 => Some(b),
                _ => Some(c),
            });
        let Some((k, _)) = pick else { break };
        let (node, split) = open.swap_remove(k);
        let split = split.unwrap();
        let left = nodes.len();
        nodes.push(Node::Leaf {
            leaf: newton(&split.left),
        });
        nodes.push(Node::Leaf {
            leaf: newton(&split.right),
        });
        nodes[node] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right: left + 1,
        };
        let ls = best_split(rows, lambdas, &split.left, min_leaf);
        let rs = best_split(rows, lambdas, &split.right, min_leaf);
        open.push((left, ls));
        open.push((left + 1, rs));
        leaves += 1;
    }
    RegressionTree { nodes }
}

pub fn lambdamart_train(
    data: &RankingDataset,
    registry: &FeatureRegistry,
    config: &LambdaMartConfig,
) -> Result<RankingModel> {
    if config.trees == 0 {
        return Err(Error::config("LambdaMART needs at least one tree"));
    }
    if config.leaves < 2 {
        return Err(Error::config("LambdaMART trees need at least two leaves"));
    }
    if !(config.learning_rate > 0.0)
        || !(config.query_subsample > 0.0 && config.query_subsample <= 1.0)
    {
        return Err(Error::config(
            "learning rate and subsample must be positive",
        ));
    }
    if data.rows.len() != data.labels.len() {
        return Err(Error::config("labels are not aligned with rows"));
    }
    let arity = registry.len();
    if let Some(r) = data.rows.iter().find(|r| r.len() != arity) {
        return Err(Error::dim(arity, r.len()));
    }
    if !data.groups.iter().any(|g| g.len() >= 2) {
        return Err(Error::config("need at least one query with two documents"));
    }
    if !data.groups.iter().any(|g| {
        let l = &data.labels[g.clone()];
        l.iter().any(|&x| x != l[0])
    }) {
        return Err(Error::DegenerateTraining(
            "every query has identical labels".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = data.rows.len();
    let mut scores = vec![0f64; n];
    let mut trees = Vec::with_capacity(config.trees);
    for t in 0..config.trees {
        let mut groups: Vec<usize> = (0..data.groups.len()).collect();
        if config.query_subsample < 1.0 {
            groups.shuffle(&mut rng);
            groups
                .truncate(((groups.len() as f64 * config.query_subsample).ceil() as usize).max(1));
            groups.sort_unstable();
        }
        let mut lambdas = vec![0f64; n];
        let mut weights = vec![0f64; n];
        let mut samples = Vec::new();
        for &g in &groups {
            let r = data.groups[g].clone();
            query_lambdas(
                &scores[r.clone()],
                &data.labels[r.clone()],
                &mut lambdas[r.clone()],
                &mut weights[r.clone()],
            );
            samples.extend(r);
        }
        let tree = fit_tree(
            &data.rows,
            &lambdas,
            &weights,
            samples,
            config.leaves,
            config.min_leaf,
        );
        for (s, row) in scores.iter_mut().zip(&data.rows) {
            *s += config.learning_rate * tree.evaluate(row);
        }
        debug!("tree {t}: {} nodes", tree.nodes.len());
        trees.push(tree);
    }
    Ok(RankingModel {
        learning_rate: config.learning_rate,
        arity,
        feature_names: registry.names().to_vec(),
        registry_digest: registry.digest(),
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry(n: usize) -> FeatureRegistry {
        FeatureRegistry::new((0..n).map(|i| format!("f{i}")).collect())
    }

    #[test]
    fn zero_trees_is_config_error() {
        let mut d = RankingDataset::default();
        d.push_query(vec![vec![0.0], vec![1.0]], vec![0, 1]);
        let cfg = LambdaMartConfig {
            trees: 0,
            ..Default::default()
        };
        assert!(matches!(
            lambdamart_train(&d, &registry(1), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn identical_labels_are_degenerate() {
        let mut d = RankingDataset::default();
        d.push_query(vec![vec![0.0], vec![1.0]], vec![2, 2]);
        assert!(matches!(
            lambdamart_train(&d, &registry(1), &LambdaMartConfig::default()),
            Err(Error::DegenerateTraining(_))
        ));
    }

    #[test]
    fn single_leaf_trees_score_constant() {
        let m = RankingModel {
            learning_rate: 0.5,
            arity: 2,
            feature_names: vec!["a".into(), "b".into()],
            registry_digest: String::new(),
            trees: vec![
                RegressionTree {
                    nodes: vec![Node::Leaf { leaf: 2.0 }]
                };
                3
            ],
        };
        assert_eq!(m.model_score(&[0.0, 9.0]).unwrap(), 3.0);
        assert_eq!(m.model_score(&[5.0, -1.0]).unwrap(), 3.0);
        assert!(m.model_score(&[1.0]).is_err());
    }

    #[test]
    fn json_is_readable_and_validated() {
        let m = RankingModel {
            learning_rate: 0.1,
            arity: 1,
            feature_names: vec!["a".into()],
            registry_digest: "x".into(),
            trees: vec![RegressionTree {
                nodes: vec![
                    Node::Split {
                        feature: 0,
                        threshold: 0.5,
                        left: 1,
                        right: 2,
                    },
                    Node::Leaf { leaf: -1.0 },
                    Node::Leaf { leaf: 1.0 },
                ],
            }],
        };
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"threshold\":0.5"));
        assert_eq!(RankingModel::from_json(json.as_bytes()).unwrap(), m);
        let bad = json.replace("\"feature\":0", "\"feature\":3");
        assert!(RankingModel::from_json(bad.as_bytes()).is_err());
    }
}
