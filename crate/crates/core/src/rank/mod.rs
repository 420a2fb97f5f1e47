//! Level-2 ranking: feature rows, judgment transform, LambdaMART and NDCG.

pub mod judgments;
pub mod lambdamart;
pub mod ndcg;
pub mod row;
pub mod text;

use serde::{Deserialize, Serialize};

pub use self::judgments::{
    fit_strengths, pairwise_to_listwise, quintile_grades, read_judgments, ListwiseLabel,
    PairwiseJudgment,
};
pub use self::lambdamart::{
    lambdamart_train, LambdaMartConfig, RankingDataset, RankingModel, RegressionTree,
};
pub use self::ndcg::{dcg_at_k, ndcg_at_k, ndcg_from_grades};
pub use self::row::{assemble_feature_row, FeatureRegistry, L2FeatureRow, QueryRowContext};
pub use self::text::{text_match_score, tokenize, TextIdf};

use crate::error::{Error, Result};

/// Anything that maps a feature row to a score; higher ranks first.
pub trait RowScorer: Send + Sync {
    fn score(&self, row: &[f32]) -> Result<f64>;
    fn arity(&self) -> usize;
}

/// `bias + Σ wᵢ xᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearScorer {
    /// Scores by a single named slot times `weight`.
    pub fn single(registry: &FeatureRegistry, slot: &str, weight: f64) -> Result<Self> {
        let i = registry
            .slot(slot)
            .ok_or_else(|| Error::config(format!("unknown feature slot {slot}")))?;
        let mut weights = vec![0.0; registry.len()];
        weights[i] = weight;
        Ok(Self { weights, bias: 0.0 })
    }

    /// Negated `dist.<family>`: the ranker used when no model is supplied.
    pub fn distance_baseline(registry: &FeatureRegistry, family: &str) -> Result<Self> {
        Self::single(registry, &format!("dist.{family}"), -1.0)
    }

    /// Negated Level-1 distance: reproduces the Level-1 order.
    pub fn l1_identity(registry: &FeatureRegistry) -> Result<Self> {
        Self::single(registry, "l1_distance", -1.0)
    }
}

impl RowScorer for LinearScorer {
    fn score(&self, row: &[f32]) -> Result<f64> {
        if row.len() != self.weights.len() {
            return Err(Error::dim(self.weights.len(), row.len()));
        }
        Ok(self.bias
            + self
                .weights
                .iter()
                .zip(row)
                .map(|(w, &x)| w * x as f64)
                .sum::<f64>())
    }

    fn arity(&self) -> usize {
        self.weights.len()
    }
}
