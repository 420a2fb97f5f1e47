mod prepare;
mod query;
mod train;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};

use vsearch_core::eval::exact_top_k;
use vsearch_core::feature::FeatureBundle;
use vsearch_core::index::{load_index, Index};
use vsearch_core::rank::{FeatureRegistry, LinearScorer, RankingModel, RowScorer};
use vsearch_core::retrieve::{Engine, Query};

use crate::{Cli, Command, TrainCommand};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenCorpus(a) => prepare::gen_corpus(cli, a),
        Command::Extract(a) => prepare::extract(cli, a),
        Command::BuildIndex(a) => prepare::build_index(cli, a),
        Command::Train(t) => match t {
            TrainCommand::Pca(a) => train::pca(cli, a),
            TrainCommand::Pq(a) => train::pq(cli, a),
            TrainCommand::Vw(a) => train::vw(cli, a),
            TrainCommand::Triplet(a) => train::triplet(cli, a),
            TrainCommand::Ranker(a) => train::ranker(cli, a),
        },
        Command::Search(a) => query::search(cli, a),
        Command::Eval(a) => query::eval(cli, a),
        Command::Serve(a) => query::serve(a),
        Command::Bench(a) => query::bench(cli, a),
    }
}

fn open_index(path: &Path) -> Result<Arc<Index>> {
    Ok(Arc::new(load_index(path).with_context(|| {
        format!("loading index {}", path.display())
    })?))
}

/// A LambdaMART model from JSON, or the Level-1 distance baseline.
fn scorer(index: &Index, ranker: Option<&Path>) -> Result<Arc<dyn RowScorer>> {
    let registry = FeatureRegistry::for_manifest(index.manifest());
    Ok(match ranker {
        Some(path) => {
            let bytes =
                std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let model = RankingModel::from_json(&bytes)?;
            model.check_registry(&registry)?;
            Arc::new(model)
        }
        None => Arc::new(LinearScorer::distance_baseline(
            &registry,
            index.manifest().l1_family(),
        )?),
    })
}

fn engine(index: &Path, ranker: Option<&Path>) -> Result<Engine> {
    let index = open_index(index)?;
    let scorer = scorer(&index, ranker)?;
    Ok(Engine::new(index, scorer)?)
}

fn query_for(
    engine: &Engine,
    features: FeatureBundle,
    top_k: usize,
    deadline_ms: Option<u64>,
) -> Query {
    let mut q = Query::new(features, engine.default_cascade());
    q.top_k = top_k;
    q.cascade.l1_keep = q.cascade.l1_keep.max(top_k);
    q.deadline = deadline_ms.map(Duration::from_millis);
    q
}

/// Stored raw Level-1 vectors of every indexed document, in shard order.
fn stored_l1(index: &Index) -> Option<Vec<(u64, &[f32])>> {
    let family = index.manifest().l1_family();
    let mut out = Vec::with_capacity(index.doc_count());
    for shard in index.shards() {
        let store = shard.family(family)?;
        for (pos, id) in shard.doc_ids().iter().enumerate() {
            out.push((*id, store.raw(pos)?));
        }
    }
    Some(out)
}

/// Exact top-`k` ids by Level-1 distance.
fn brute_force(items: &[(u64, &[f32])], query: &[f32], k: usize) -> Vec<u64> {
    exact_top_k(query, items.iter().map(|(id, v)| (*id, *v)), k)
        .into_iter()
        .map(|(id, _)| id)
        .collect()
}
