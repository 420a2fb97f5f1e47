use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde_json::json;
use walkdir::WalkDir;

use vsearch_core::feature::{
    extract_features, load_embeddings, EmbeddingSet, FamilySource, PipelineConfig, RawImage,
};
use vsearch_core::index::{self, save_index, FamilyModels, ImageDoc, IndexConfig, Models};
use vsearch_core::quantize::pq::PQ_SUB_DIM;
use vsearch_core::synth::{CorpusSpec, SyntheticCorpus};

use super::train::{read_model, vw_file, PCA_PREFIX, PQ_PREFIX};
use crate::corpus::{write_docs, Corpus, DOCS_FILE, SPEC_FILE};
use crate::{emit, BuildIndexArgs, Cli, ExtractArgs, GenCorpusArgs};

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "gif"];

pub fn gen_corpus(cli: &Cli, a: &GenCorpusArgs) -> Result<()> {
    let spec = CorpusSpec {
        clusters: a.clusters,
        docs_per_cluster: a.docs_per_cluster,
        dim: a.dim,
        aux_dim: a.aux_dim,
        latent_dim: a.latent_dim,
        spread: a.spread,
        noise_sigma: a.noise_sigma,
        categories: a.categories,
        duplicate_every: a.duplicate_every,
        seed: cli.seed,
    };
    let corpus = SyntheticCorpus::new(spec.clone())?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(SPEC_FILE), serde_json::to_string_pretty(&spec)?)?;
    let mut report = json!({ "out": a.out, "docs": corpus.len(), "spec": spec });
    if a.materialize {
        let docs: Vec<ImageDoc> = corpus.docs().collect();
        write_docs(&a.out.join(DOCS_FILE), &docs)?;
        report["materialized"] = json!(DOCS_FILE);
    }
    emit(cli.json, "gen-corpus", report);
    Ok(())
}

/// Document text from a file name: `red_sports-car.png` -> `red sports car`.
fn name_text(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    stem.split(|c: char| c == '_' || c == '-' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_embedding_arg(arg: &str) -> Result<(&str, &str)> {
    match arg.split_once('=') {
        Some((f, p)) if !f.is_empty() && !p.is_empty() => Ok((f, p)),
        _ => bail!("--embeddings expects FAMILY=PATH, got {arg:?}"),
    }
}

/// Image ids are positions in the sorted file list, so external embedding
/// files can be keyed before extraction runs. Undecodable files keep their
/// id and are skipped.
pub fn extract(cli: &Cli, a: &ExtractArgs) -> Result<()> {
    let pipeline = match &a.pipeline {
        Some(p) => {
            PipelineConfig::from_file(p).with_context(|| format!("pipeline {}", p.display()))?
        }
        None => PipelineConfig::color_only(),
    };
    let mut external: Vec<EmbeddingSet> = Vec::new();
    for arg in &a.embeddings {
        let (family, path) = parse_embedding_arg(arg)?;
        let dim = pipeline.family(family).map(|f| f.dim);
        let set =
            load_embeddings(path, family, dim).with_context(|| format!("embeddings {path}"))?;
        info!("{family}: {} vectors of dim {}", set.len(), set.dim);
        external.push(set);
    }
    for spec in pipeline.families() {
        if spec.source == FamilySource::External && !external.iter().any(|s| s.family == spec.name)
        {
            bail!(
                "pipeline family {} is external; pass --embeddings {}=FILE",
                spec.name,
                spec.name
            );
        }
    }

    let mut files: Vec<_> = WalkDir::new(&a.images)
        .sort_by_file_name()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("listing {}", a.images.display()))?
        .into_iter()
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();

    let mut docs = Vec::with_capacity(files.len());
    let (mut undecodable, mut missing) = (0usize, 0usize);
    'files: for (id, path) in files.iter().enumerate() {
        let id = id as u64;
        let image = match fs::read(path)
            .map_err(anyhow::Error::from)
            .and_then(|b| Ok(RawImage::decode(&b)?))
        {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                undecodable += 1;
                continue;
            }
        };
        let mut features = extract_features(&image, None, &pipeline)?;
        for set in &external {
            match set.vectors.get(&id) {
                Some(v) => {
                    features.embeddings.insert(set.family.clone(), v.clone());
                }
                None => {
                    warn!(
                        "skipping {}: no {} embedding for id {id}",
                        path.display(),
                        set.family
                    );
                    missing += 1;
                    continue 'files;
                }
            }
        }
        let rel = path.strip_prefix(&a.images).unwrap_or(path);
        let category = rel
            .parent()
            .and_then(|p| p.components().next())
            .map(|c| c.as_os_str().to_string_lossy().into_owned());
        let text = name_text(path);
        features.category = category.clone();
        features.metadata_text = Some(text.clone()).filter(|t| !t.is_empty());
        docs.push(ImageDoc {
            image_id: id,
            source_uri: path.display().to_string(),
            metadata_text: text,
            category,
            features,
        });
    }
    if docs.is_empty() {
        bail!("no usable images under {}", a.images.display());
    }
    fs::create_dir_all(&a.out)?;
    write_docs(&a.out.join(DOCS_FILE), &docs)?;
    emit(
        cli.json,
        "extract",
        json!({
            "out": a.out,
            "docs": docs.len(),
            "undecodable": undecodable,
            "missing_embeddings": missing,
            "families": docs[0].features.embeddings.keys().collect::<Vec<_>>(),
            "pipeline_digest": pipeline.digest(),
        }),
    );
    Ok(())
}

/// Reads PCA + PQ for every configured family and the visual words of the
/// Level-1 family from a `train` output directory.
fn read_models(dir: &Path, config: &IndexConfig) -> Result<Models> {
    let mut families = BTreeMap::new();
    for f in &config.families {
        let pca = read_model(
            dir,
            PCA_PREFIX,
            &f.name,
            vsearch_core::feature::PcaModel::from_bytes,
        )?;
        let pq = read_model(
            dir,
            PQ_PREFIX,
            &f.name,
            vsearch_core::quantize::PqCodebook::from_bytes,
        )?;
        families.insert(f.name.clone(), FamilyModels { pca, pq });
    }
    let l1 = config.l1()?.name.clone();
    let vw = read_model(
        dir,
        "",
        &vw_file(&l1),
        vsearch_core::quantize::VisualWordCodebook::from_bytes,
    )?;
    Ok(Models {
        families,
        vw,
        l1_family: l1,
    })
}

/// Adopts the shapes of pre-trained models so the config matches them.
fn align_config(config: &mut IndexConfig, models: &Models) {
    for f in &mut config.families {
        if let Some(m) = models.families.get(&f.name) {
            f.pq_subspaces = m.pq.subspaces();
            f.pq_centroids = m.pq.centroids_per_subspace();
        }
    }
    config.vw_books = models.vw.books();
    config.vw_vocab = models.vw.vocab();
    config.vw_dim = models.vw.dim();
}

pub fn build_index(cli: &Cli, a: &BuildIndexArgs) -> Result<()> {
    let corpus = Corpus::open(&a.corpus)?;
    let mut config = corpus.index_config(a.l1_family.as_deref())?;
    config.shards = a.shards;
    config.store_raw = !a.no_raw;
    config.vw_books = a.vw_books;
    config.vw_vocab = a.vw_vocab;
    config.vw_dim = a.vw_dim;
    config.train_sample = a.train_sample;
    config.kmeans_iters = a.kmeans_iters;
    config.seed = cli.seed;
    for f in &mut config.families {
        if let Some(n) = a.pq_subspaces {
            f.pq_subspaces = n.min(f.dim / PQ_SUB_DIM).max(1);
        }
        if let Some(k) = a.pq_centroids {
            f.pq_centroids = k;
        }
    }

    let started = std::time::Instant::now();
    let models = match &a.models {
        Some(dir) => {
            let m = read_models(dir, &config)?;
            align_config(&mut config, &m);
            m
        }
        None => Models::train(&config, &corpus.training_sample(config.train_sample))?,
    };
    let train_s = started.elapsed().as_secs_f64();
    let index = index::build_index(corpus.docs(), Arc::new(models), &config)?;
    let manifest = save_index(&index, &a.out)?;
    emit(
        cli.json,
        "build-index",
        json!({
            "out": a.out,
            "docs": index.doc_count(),
            "shards": manifest.shard_count,
            "l1_family": manifest.l1_family(),
            "families": manifest.families,
            "model_digest": manifest.digests.combined(),
            "train_seconds": train_s,
            "total_seconds": started.elapsed().as_secs_f64(),
        }),
    );
    Ok(())
}
