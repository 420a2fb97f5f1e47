use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use vsearch_core::eval::{mean_ndcg, simulate_judgments, single_feature_baselines, JudgmentSpec};
use vsearch_core::feature::{triplet_loss, triplet_train, PcaModel, Triplet, TripletTrainConfig};
use vsearch_core::index::stride_sample;
use vsearch_core::quantize::codebook::SubspaceTrainConfig;
use vsearch_core::quantize::pq::PQ_SUB_DIM;
use vsearch_core::quantize::{PqCodebook, VisualWordCodebook};
use vsearch_core::rank::{lambdamart_train, FeatureRegistry, LambdaMartConfig, LinearScorer};
use vsearch_core::retrieve::Engine;

use super::open_index;
use crate::corpus::Corpus;
use crate::{emit, Cli, TrainPcaArgs, TrainPqArgs, TrainRankerArgs, TrainTripletArgs, TrainVwArgs};

pub const PCA_PREFIX: &str = "pca.";
pub const PQ_PREFIX: &str = "pq.";
const TRIPLET_SAMPLE: usize = 20_000;

pub fn vw_file(l1_family: &str) -> String {
    format!("vw.{l1_family}")
}

fn model_path(dir: &Path, prefix: &str, name: &str) -> std::path::PathBuf {
    dir.join(format!("{prefix}{name}.bin"))
}

pub fn read_model<T>(
    dir: &Path,
    prefix: &str,
    name: &str,
    parse: fn(&[u8]) -> vsearch_core::Result<T>,
) -> Result<T> {
    let path = model_path(dir, prefix, name);
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    parse(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn write_model(dir: &Path, prefix: &str, name: &str, bytes: &[u8]) -> Result<std::path::PathBuf> {
    fs::create_dir_all(dir)?;
    let path = model_path(dir, prefix, name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn family_sample(corpus: &Corpus, family: &str, cap: usize) -> Result<Vec<Vec<f32>>> {
    let mut all = corpus.training_sample(cap);
    let names: Vec<String> = all.keys().cloned().collect();
    all.remove(family)
        .with_context(|| format!("corpus has no family {family} (have {names:?})"))
}

fn reduce(pca: &PcaModel, vectors: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    Ok(vectors
        .iter()
        .map(|v| pca.apply(v))
        .collect::<vsearch_core::Result<_>>()?)
}

pub fn pca(cli: &Cli, a: &TrainPcaArgs) -> Result<()> {
    let corpus = Corpus::open(&a.corpus)?;
    let sample = family_sample(&corpus, &a.family, a.train_sample)?;
    let model = PcaModel::train(&sample, a.dim)?;
    let kept: f32 = model.eigenvalues().iter().sum();
    let path = write_model(&a.models, PCA_PREFIX, &a.family, &model.to_bytes())?;
    emit(
        cli.json,
        "train pca",
        json!({
            "family": a.family,
            "input_dim": model.input_dim(),
            "output_dim": model.output_dim(),
            "samples": sample.len(),
            "retained_variance": kept,
            "file": path,
        }),
    );
    Ok(())
}

pub fn pq(cli: &Cli, a: &TrainPqArgs) -> Result<()> {
    let corpus = Corpus::open(&a.corpus)?;
    let pca = read_model(&a.models, PCA_PREFIX, &a.family, PcaModel::from_bytes)?;
    if pca.output_dim() != a.subspaces * PQ_SUB_DIM {
        bail!(
            "PCA for {} outputs {} dims; {} subspaces need {}",
            a.family,
            pca.output_dim(),
            a.subspaces,
            a.subspaces * PQ_SUB_DIM
        );
    }
    let reduced = reduce(&pca, &family_sample(&corpus, &a.family, a.train_sample)?)?;
    let book = PqCodebook::train(&reduced, a.subspaces, a.centroids, cli.seed)?;
    let distortion = reduced
        .iter()
        .map(|v| {
            let r = book.reconstruct(&book.encode(v)?.0)?;
            Ok(v.iter()
                .zip(&r)
                .map(|(x, y)| ((x - y) * (x - y)) as f64)
                .sum::<f64>())
        })
        .sum::<vsearch_core::Result<f64>>()?
        / reduced.len() as f64;
    let path = write_model(&a.models, PQ_PREFIX, &a.family, &book.to_bytes())?;
    emit(
        cli.json,
        "train pq",
        json!({
            "family": a.family,
            "subspaces": book.subspaces(),
            "centroids": book.centroids_per_subspace(),
            "samples": reduced.len(),
            "mean_sq_error": distortion,
            "file": path,
        }),
    );
    Ok(())
}

pub fn vw(cli: &Cli, a: &TrainVwArgs) -> Result<()> {
    let corpus = Corpus::open(&a.corpus)?;
    let pca = read_model(&a.models, PCA_PREFIX, &a.family, PcaModel::from_bytes)?;
    if a.vw_dim > pca.output_dim() {
        bail!(
            "--vw-dim {} exceeds the PCA output dim {}",
            a.vw_dim,
            pca.output_dim()
        );
    }
    let prefix: Vec<Vec<f32>> = reduce(&pca, &family_sample(&corpus, &a.family, a.train_sample)?)?
        .into_iter()
        .map(|mut v| {
            v.truncate(a.vw_dim);
            v
        })
        .collect();
    let book = VisualWordCodebook::train_with(
        &prefix,
        a.books,
        a.vocab,
        SubspaceTrainConfig {
            max_iters: a.kmeans_iters,
            seed: cli.seed ^ 0x5157,
            restarts: 1,
        },
    )?;
    let path = write_model(&a.models, "", &vw_file(&a.family), &book.to_bytes())?;
    emit(
        cli.json,
        "train vw",
        json!({
            "family": a.family,
            "books": book.books(),
            "vocab": book.vocab(),
            "dim": book.dim(),
            "samples": prefix.len(),
            "file": path,
        }),
    );
    Ok(())
}

/// Anchor and positive share a group (cluster or category), the negative
/// comes from another group.
fn sample_triplets(
    corpus: &Corpus,
    family: &str,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Triplet>> {
    let ids: Vec<u64> = (0..corpus.len() as u64).collect();
    let mut groups: BTreeMap<String, Vec<Vec<f32>>> = BTreeMap::new();
    for id in stride_sample(&ids, TRIPLET_SAMPLE) {
        let doc = corpus.doc(id);
        let v = doc
            .features
            .embedding(family)
            .with_context(|| format!("document {id} has no {family}"))?
            .to_vec();
        groups.entry(corpus.group(&doc)).or_default().push(v);
    }
    let groups: Vec<Vec<Vec<f32>>> = groups.into_values().collect();
    let anchors: Vec<usize> = (0..groups.len())
        .filter(|&g| groups[g].len() >= 2)
        .collect();
    if anchors.is_empty() || groups.len() < 2 {
        bail!("triplets need two groups and a group with two documents");
    }
    Ok((0..n)
        .map(|_| {
            let g = *anchors.choose(rng).unwrap();
            let mut pair = groups[g].choose_multiple(rng, 2);
            let (query, positive) = (pair.next().unwrap().clone(), pair.next().unwrap().clone());
            let mut other = rng.gen_range(0..groups.len() - 1);
            if other >= g {
                other += 1;
            }
            let negative = groups[other].choose(rng).unwrap().clone();
            Triplet {
                query,
                positive,
                negative,
            }
        })
        .collect())
}

pub fn triplet(cli: &Cli, a: &TrainTripletArgs) -> Result<()> {
    let corpus = Corpus::open(&a.corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let triplets = sample_triplets(&corpus, &a.family, a.triplets, &mut rng)?;
    let config = TripletTrainConfig {
        margin: a.margin,
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        seed: cli.seed,
    };
    let trained = triplet_train(&triplets, a.out_dim, &config)?;
    let final_loss = triplet_loss(&trained.model, &triplets)?.0;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, serde_json::to_vec_pretty(&trained.model)?)?;
    emit(
        cli.json,
        "train triplet",
        json!({
            "family": a.family,
            "input_dim": trained.model.input_dim,
            "output_dim": trained.model.output_dim,
            "triplets": triplets.len(),
            "initial_loss": trained.loss_history.first(),
            "final_loss": final_loss,
            "out": a.out,
        }),
    );
    Ok(())
}

/// Judgments come from simulated raters who follow a hidden relevance
/// function, so ranker training needs a synthetic corpus.
pub fn ranker(cli: &Cli, a: &TrainRankerArgs) -> Result<()> {
    let corpus = Corpus::open(&a.corpus)?;
    let synthetic = corpus
        .synthetic()
        .context("ranker training needs a synthetic corpus (corpus.json)")?;
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        bail!("--train-fraction must be in (0, 1)");
    }
    let index = open_index(&a.index)?;
    let registry = FeatureRegistry::for_manifest(index.manifest());
    let baseline = Arc::new(LinearScorer::distance_baseline(
        &registry,
        index.manifest().l1_family(),
    )?);
    let engine = Engine::new(index, baseline.clone())?;
    let spec = JudgmentSpec {
        queries: a.queries,
        candidates_per_query: a.candidates,
        pairs_per_query: a.pairs,
        seed: cli.seed,
        ..JudgmentSpec::default()
    };
    let set = simulate_judgments(&engine, synthetic, &spec)?;
    let queries = set.query_ids();
    let cut = ((queries.len() as f64 * a.train_fraction).floor() as usize)
        .clamp(1, queries.len().saturating_sub(1));
    if queries.len() < 2 {
        bail!(
            "only {} queries produced candidates; need at least 2",
            queries.len()
        );
    }
    let (train_q, test_q) = queries.split_at(cut);
    let (train, test) = (set.dataset(train_q)?, set.dataset(test_q)?);
    let config = LambdaMartConfig {
        trees: a.trees,
        leaves: a.leaves,
        learning_rate: a.learning_rate,
        seed: cli.seed,
        ..LambdaMartConfig::default()
    };
    let model = lambdamart_train(&train, &registry, &config)?;
    let train_ndcg = mean_ndcg(&model, &train, 5)?;
    let test_ndcg = mean_ndcg(&model, &test, 5)?;
    let baselines = single_feature_baselines(registry.names(), &train, &test, 5)?;
    let best = baselines
        .iter()
        .max_by(|x, y| x.test_ndcg.total_cmp(&y.test_ndcg));

    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, serde_json::to_vec_pretty(&model)?)?;
    if let Some(path) = &a.judgments_out {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for j in &set.judgments {
            serde_json::to_writer(&mut w, j)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    emit(
        cli.json,
        "train ranker",
        json!({
            "trees": model.trees.len(),
            "features": registry.names(),
            "train_queries": train_q.len(),
            "test_queries": test_q.len(),
            "judgments": set.judgments.len(),
            "train_ndcg5": train_ndcg,
            "test_ndcg5": test_ndcg,
            "best_single_feature": best.map(|b| &b.feature),
            "best_single_feature_ndcg5": best.map(|b| b.test_ndcg),
            "out": a.out,
        }),
    );
    Ok(())
}
