//! Cascaded retrieval: visual-word matching (L0), PQ rerank (L1) and
//! full-feature ranking (L2), fanned out over shards with an optional
//! per-query deadline.

mod cascade;
mod dedup;
mod scatter;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use self::cascade::{level0_match, level1_rank, level2_rank};
pub use self::dedup::{dedup_postprocess, DedupKey, DEFAULT_PHASH_THRESHOLD};
pub use self::scatter::{scatter_gather, FaultHook, Gathered, ShardResponse};

use crate::error::{Error, Result};
use crate::feature::FeatureBundle;
use crate::index::Index;
use crate::rank::{
    assemble_feature_row, FeatureRegistry, L2FeatureRow, QueryRowContext, RowScorer,
};

pub const DEFAULT_TOP_K: usize = 20;
pub const DEFAULT_L1_KEEP: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub m_match: usize,
    pub l1_keep: usize,
    pub l1_family: String,
    pub l2_exact: bool,
}

impl CascadeConfig {
    /// Level-2 distances come from stored raw vectors when the index has them.
    pub fn new(l1_family: impl Into<String>) -> Self {
        Self {
            m_match: 1,
            l1_keep: DEFAULT_L1_KEEP,
            l1_family: l1_family.into(),
            l2_exact: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub features: FeatureBundle,
    pub top_k: usize,
    pub cascade: CascadeConfig,
    pub deadline: Option<Duration>,
}

impl Query {
    pub fn new(features: FeatureBundle, cascade: CascadeConfig) -> Self {
        Self {
            features,
            top_k: DEFAULT_TOP_K,
            cascade,
            deadline: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::config("top_k must be at least 1"));
        }
        if self.cascade.l1_keep < self.top_k {
            return Err(Error::config(format!(
                "l1_keep ({}) must be at least top_k ({})",
                self.cascade.l1_keep, self.top_k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub doc_id: u64,
    pub score: f64,
    pub l1_distance: f32,
    pub source_uri: String,
    pub metadata_text: String,
    /// Set on a result that absorbed duplicates; the group is named after it.
    pub dedup_group: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub l0_count: usize,
    pub l1_count: usize,
    pub l2_count: usize,
    pub final_count: usize,
    pub partial: bool,
    pub stage_latencies_ms: BTreeMap<String, f64>,
    /// L0 candidates dropped at L1 for lacking a PQ code.
    pub skipped: usize,
    pub timed_out_shards: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub results: Vec<RankedResult>,
    pub diagnostics: Diagnostics,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// A loaded index plus the Level-2 scorer. Cheap to clone, safe to share.
#[derive(Clone)]
pub struct Engine {
    index: Arc<Index>,
    scorer: Arc<dyn RowScorer>,
    fault: Option<FaultHook>,
    phash_threshold: u32,
}

impl Engine {
    pub fn new(index: Arc<Index>, scorer: Arc<dyn RowScorer>) -> Result<Self> {
        let arity = FeatureRegistry::for_manifest(index.manifest()).len();
        if scorer.arity() != arity {
            return Err(Error::config(format!(
                "ranking model has arity {}, index rows have {arity}",
                scorer.arity()
            )));
        }
        Ok(Self {
            index,
            scorer,
            fault: None,
            phash_threshold: DEFAULT_PHASH_THRESHOLD,
        })
    }

    /// Installs a hook that may delay individual shards, for fault testing.
    pub fn with_fault_hook(mut self, hook: FaultHook) -> Self {
        self.fault = Some(hook);
        self
    }

    pub fn with_phash_threshold(mut self, t: u32) -> Self {
        self.phash_threshold = t;
        self
    }

    pub fn index(&self) -> &Arc<Index> {
        &self.index
    }

    pub fn registry(&self) -> FeatureRegistry {
        FeatureRegistry::for_manifest(self.index.manifest())
    }

    pub fn default_cascade(&self) -> CascadeConfig {
        CascadeConfig::new(self.index.manifest().l1_family())
    }

    fn l1_vector<'q>(&self, query: &'q Query) -> Result<&'q [f32]> {
        let l1 = self.index.manifest().l1_family();
        if query.cascade.l1_family != l1 {
            return Err(Error::config(format!(
                "index Level-1 family is {l1}, query asks for {}",
                query.cascade.l1_family
            )));
        }
        query
            .features
            .embedding(l1)
            .ok_or_else(|| Error::config(format!("query lacks the {l1} embedding")))
    }

    /// Level-2 rows of the first `n` Level-1 survivors, in Level-1 order.
    /// Used to collect training data for the ranker.
    pub fn candidate_rows(&self, query: &Query, n: usize) -> Result<Vec<(u64, L2FeatureRow)>> {
        query.validate()?;
        let index = &self.index;
        let (reduced, words) = index.models().l1_reduce(self.l1_vector(query)?)?;
        let table = index.models().l1().pq.distance_table(&reduced)?;
        let gathered = scatter_gather(
            index,
            Arc::new(words),
            Arc::new(table),
            &query.cascade,
            None,
            None,
        )?;
        let ctx = QueryRowContext::new(&query.features, index, query.cascade.l2_exact)?;
        Ok(gathered
            .candidates
            .iter()
            .take(n)
            .map(|&(id, l1)| {
                let (s, pos) = index.locate(id).expect("candidates are indexed");
                (id, assemble_feature_row(&ctx, index.shard(s), pos, l1))
            })
            .collect())
    }

    pub fn search(&self, query: &Query) -> Result<SearchOutcome> {
        query.validate()?;
        let total = Instant::now();
        let index = &self.index;
        let cascade = &query.cascade;
        let l1_vec = self.l1_vector(query)?;

        let mut diag = Diagnostics::default();
        let t = Instant::now();
        let (reduced, words) = index.models().l1_reduce(l1_vec)?;
        let table = index.models().l1().pq.distance_table(&reduced)?;
        diag.stage_latencies_ms.insert("assign".into(), ms(t));

        let t = Instant::now();
        let gathered = scatter_gather(
            index,
            Arc::new(words),
            Arc::new(table),
            cascade,
            query.deadline,
            self.fault.clone(),
        );
        diag.stage_latencies_ms.insert("l0_l1".into(), ms(t));
        let gathered = match gathered {
            Err(Error::AllShardsTimedOut(mut partial)) => {
                partial.stage_latencies_ms = diag.stage_latencies_ms;
                return Err(Error::AllShardsTimedOut(partial));
            }
            r => r?,
        };
        diag.l0_count = gathered.l0_count;
        diag.l1_count = gathered.candidates.len();
        diag.skipped = gathered.skipped;
        diag.partial = !gathered.timed_out.is_empty();
        diag.timed_out_shards = gathered.timed_out;

        let t = Instant::now();
        let ctx = QueryRowContext::new(&query.features, index, cascade.l2_exact)?;
        let ranked = level2_rank(&gathered.candidates, &ctx, index, self.scorer.as_ref())?;
        diag.l2_count = ranked.len();
        diag.stage_latencies_ms.insert("l2".into(), ms(t));

        let t = Instant::now();
        let keys: Vec<DedupKey> = ranked
            .iter()
            .map(|r| {
                let m = index.meta(r.doc_id).expect("ranked docs are indexed");
                DedupKey {
                    digest: m.digest,
                    phash: m.phash,
                }
            })
            .collect();
        let mut results = dedup_postprocess(ranked, &keys, self.phash_threshold);
        results.truncate(query.top_k);
        diag.final_count = results.len();
        diag.stage_latencies_ms.insert("dedup".into(), ms(t));
        diag.stage_latencies_ms.insert("total".into(), ms(total));
        Ok(SearchOutcome {
            results,
            diagnostics: diag,
        })
    }
}
