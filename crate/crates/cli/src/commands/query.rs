use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use vsearch_core::eval::{
    mean_ndcg, recall_at_k, simulate_judgments, single_feature_baselines, JudgmentSpec,
    LatencySummary,
};
use vsearch_core::feature::{extract_features, CropRect, FeatureBundle, PipelineConfig, RawImage};
use vsearch_core::quantize::CompressionReport;
use vsearch_core::rank::{FeatureRegistry, LinearScorer, RowScorer};
use vsearch_core::retrieve::{Engine, SearchOutcome};
use vsearch_service::{AppState, ServiceConfig};

use super::{brute_force, engine, open_index, query_for, scorer, stored_l1};
use crate::corpus::Corpus;
use crate::{emit, BenchArgs, Cli, EvalArgs, Report, SearchArgs, ServeArgs};

fn parse_crop(text: &str) -> Result<CropRect> {
    let v: Vec<f32> = text
        .split(',')
        .map(|s| s.trim().parse::<f32>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("--crop expects x0,y0,x1,y1, got {text:?}"))?;
    let [x0, y0, x1, y1] = v[..] else {
        bail!("--crop expects four numbers, got {}", v.len())
    };
    Ok(CropRect::new(x0, y0, x1, y1)?)
}

fn outcome_json(outcome: &SearchOutcome) -> Value {
    json!({
        "results": outcome.results.iter().map(|r| json!({
            "doc_id": r.doc_id,
            "score": r.score,
            "source_uri": r.source_uri,
            "metadata_text": r.metadata_text,
        })).collect::<Vec<_>>(),
        "diagnostics": outcome.diagnostics,
        "partial": outcome.diagnostics.partial,
    })
}

pub fn search(cli: &Cli, a: &SearchArgs) -> Result<()> {
    let engine = engine(&a.index, a.ranker.as_deref())?;
    if a.crop.is_some() && a.image.is_none() {
        bail!("--crop applies to --image queries only");
    }
    let features = if let Some(id) = a.image_id {
        engine.index().stored_bundle(id)?
    } else if let Some(path) = &a.image {
        let pipeline = match &a.pipeline {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::color_only(),
        };
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let crop = a.crop.as_deref().map(parse_crop).transpose()?;
        extract_features(&RawImage::decode(&bytes)?, crop.as_ref(), &pipeline)?
    } else {
        let corpus = Corpus::open(a.corpus.as_deref().context("--query needs --corpus")?)?;
        corpus.query(a.query.context("no query source")?).features
    };
    let mut query = query_for(&engine, features, a.top_k, a.deadline_ms);
    query.cascade.l2_exact = !a.adc_l2;
    let outcome = engine.search(&query)?;
    emit(cli.json, "search", outcome_json(&outcome));
    Ok(())
}

fn need<'a>(path: &'a Option<std::path::PathBuf>, flag: &str, report: &str) -> Result<&'a Path> {
    path.as_deref()
        .with_context(|| format!("--report {report} needs {flag}"))
}

/// Ground-truth Level-1 vectors: stored raw vectors when the index keeps
/// them, the corpus otherwise.
fn truth_vectors(engine: &Engine, corpus: &Corpus) -> Result<Vec<(u64, Vec<f32>)>> {
    if let Some(stored) = stored_l1(engine.index()) {
        return Ok(stored.into_iter().map(|(id, v)| (id, v.to_vec())).collect());
    }
    let family = engine.index().manifest().l1_family().to_string();
    corpus
        .docs()
        .map(|d| {
            let v = d
                .features
                .embedding(&family)
                .with_context(|| format!("document {} lacks {family}", d.image_id))?;
            Ok((d.image_id, v.to_vec()))
        })
        .collect()
}

pub fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let report = match a.report {
        Report::Compression => compression(a)?,
        Report::Recall => recall(a)?,
        Report::Ndcg => ndcg(cli, a)?,
        Report::Latency => latency(a)?,
    };
    emit(cli.json, "eval", report);
    Ok(())
}

fn compression_json(name: Option<&str>, r: &CompressionReport) -> Value {
    let mut v = json!({
        "raw_dim": r.raw_dim,
        "reduced_dim": r.reduced_dim,
        "raw_bytes": r.raw_bytes,
        "pq_bytes": r.pq_bytes,
        "ratio": r.ratio,
        "display": r.display_ratio(),
    });
    if let Some(n) = name {
        v["family"] = json!(n);
    }
    v
}

fn compression(a: &EvalArgs) -> Result<Value> {
    let Some(path) = &a.index else {
        let r = CompressionReport::new(a.dim, a.subspaces, a.centroids)?;
        let mut v = compression_json(None, &r);
        v["report"] = json!("compression");
        return Ok(v);
    };
    let index = open_index(path)?;
    let families: Vec<Value> = index
        .manifest()
        .families
        .iter()
        .map(|f| {
            Ok(compression_json(
                Some(&f.name),
                &CompressionReport::new(f.dim, f.pq_subspaces, f.pq_centroids)?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(json!({ "report": "compression", "families": families }))
}

fn recall(a: &EvalArgs) -> Result<Value> {
    let engine = engine(need(&a.index, "--index", "recall")?, a.ranker.as_deref())?;
    let corpus = Corpus::open(need(&a.corpus, "--corpus", "recall")?)?;
    let truth = truth_vectors(&engine, &corpus)?;
    let items: Vec<(u64, &[f32])> = truth.iter().map(|(id, v)| (*id, v.as_slice())).collect();
    let family = engine.index().manifest().l1_family().to_string();
    let mut total = 0.0;
    let mut latencies = Vec::with_capacity(a.queries);
    for q in 0..a.queries as u64 {
        let features = corpus.query(q).features;
        let exact = brute_force(
            &items,
            features
                .embedding(&family)
                .context("query lacks the Level-1 family")?,
            a.k,
        );
        let t = Instant::now();
        let outcome = engine.search(&query_for(&engine, features, a.k, None))?;
        latencies.push(t.elapsed().as_secs_f64() * 1e3);
        let got: Vec<u64> = outcome.results.iter().map(|r| r.doc_id).collect();
        total += recall_at_k(&got, &exact, a.k);
    }
    Ok(json!({
        "report": "recall",
        "k": a.k,
        "queries": a.queries,
        "recall": total / a.queries.max(1) as f64,
        "latency": LatencySummary::from_ms(&latencies),
    }))
}

fn ndcg(cli: &Cli, a: &EvalArgs) -> Result<Value> {
    let index = open_index(need(&a.index, "--index", "ndcg")?)?;
    let corpus = Corpus::open(need(&a.corpus, "--corpus", "ndcg")?)?;
    let synthetic = corpus
        .synthetic()
        .context("--report ndcg needs a synthetic corpus")?;
    let registry = FeatureRegistry::for_manifest(index.manifest());
    let baseline = Arc::new(LinearScorer::distance_baseline(
        &registry,
        index.manifest().l1_family(),
    )?);
    let candidate_engine = Engine::new(index.clone(), baseline.clone())?;
    let spec = JudgmentSpec {
        queries: a.queries,
        seed: cli.seed,
        ..JudgmentSpec::default()
    };
    let set = simulate_judgments(&candidate_engine, synthetic, &spec)?;
    let queries = set.query_ids();
    if queries.len() < 2 {
        bail!("only {} queries produced candidates", queries.len());
    }
    // Same split as `train ranker` with its default train fraction.
    let (train_q, test_q) = queries.split_at(queries.len() / 2);
    let (train, test) = (set.dataset(train_q)?, set.dataset(test_q)?);
    let mut out = json!({
        "report": "ndcg",
        "k": a.ndcg_k,
        "test_queries": test_q.len(),
        "distance_baseline": mean_ndcg(baseline.as_ref(), &test, a.ndcg_k)?,
        "single_features": single_feature_baselines(registry.names(), &train, &test, a.ndcg_k)?,
    });
    if let Some(path) = &a.ranker {
        let model: Arc<dyn RowScorer> = scorer(&index, Some(path))?;
        out["ranker"] = json!(mean_ndcg(model.as_ref(), &test, a.ndcg_k)?);
    }
    Ok(out)
}

fn latency(a: &EvalArgs) -> Result<Value> {
    let engine = engine(need(&a.index, "--index", "latency")?, a.ranker.as_deref())?;
    let corpus = Corpus::open(need(&a.corpus, "--corpus", "latency")?)?;
    let mut totals = Vec::with_capacity(a.queries);
    let mut stages: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for q in 0..a.queries as u64 {
        let query = query_for(&engine, corpus.query(q).features, a.k, None);
        let t = Instant::now();
        let outcome = engine.search(&query)?;
        totals.push(t.elapsed().as_secs_f64() * 1e3);
        for (stage, ms) in outcome.diagnostics.stage_latencies_ms {
            stages.entry(stage).or_default().push(ms);
        }
    }
    let stages: serde_json::Map<String, Value> = stages
        .into_iter()
        .map(|(k, v)| (k, json!(LatencySummary::from_ms(&v))))
        .collect();
    Ok(json!({
        "report": "latency",
        "queries": a.queries,
        "latency": LatencySummary::from_ms(&totals),
        "stages": stages,
    }))
}

/// File first, then `SERVICE_ADDR` / `INDEX_PATH`, then flags.
pub fn serve(a: &ServeArgs) -> Result<()> {
    let mut config = match &a.service_config {
        Some(p) => ServiceConfig::from_file(p)
            .with_context(|| format!("service config {}", p.display()))?,
        None => ServiceConfig::default(),
    }
    .from_process_env();
    if let Some(addr) = &a.addr {
        config.addr = addr.clone();
    }
    if let Some(p) = &a.index {
        config.index_path = p.clone();
    }
    if let Some(p) = &a.pipeline {
        config.pipeline = Some(p.clone());
    }
    if let Some(p) = &a.ranker {
        config.ranker = Some(p.clone());
    }
    if let Some(c) = a.cache_capacity {
        config.cache_capacity = c;
    }
    if let Some(ms) = a.default_deadline_ms {
        config.default_deadline_ms = Some(ms);
    }
    let state = AppState::load(config)?;
    eprintln!(
        "serving {} documents on {}",
        state.engine.index().doc_count(),
        state.config.addr
    );
    vsearch_service::serve(state)?;
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    query_id: u64,
    worker: usize,
    wall_ms: f64,
    assign_ms: f64,
    l0_l1_ms: f64,
    l2_ms: f64,
    dedup_ms: f64,
    total_ms: f64,
    l0_count: usize,
    l1_count: usize,
    l2_count: usize,
    final_count: usize,
    skipped: usize,
    partial: bool,
    #[serde(skip)]
    ids: Vec<u64>,
}

fn bench_row(query_id: u64, worker: usize, wall_ms: f64, outcome: SearchOutcome) -> BenchRow {
    let d = outcome.diagnostics;
    let stage = |k: &str| d.stage_latencies_ms.get(k).copied().unwrap_or(0.0);
    BenchRow {
        query_id,
        worker,
        wall_ms,
        assign_ms: stage("assign"),
        l0_l1_ms: stage("l0_l1"),
        l2_ms: stage("l2"),
        dedup_ms: stage("dedup"),
        total_ms: stage("total"),
        l0_count: d.l0_count,
        l1_count: d.l1_count,
        l2_count: d.l2_count,
        final_count: d.final_count,
        skipped: d.skipped,
        partial: d.partial,
        ids: outcome.results.iter().map(|r| r.doc_id).collect(),
    }
}

/// Query `q` goes to worker `q mod workers`; rows are written in query order.
pub fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    if a.workers == 0 {
        bail!("--workers must be at least 1");
    }
    let engine = engine(&a.index, a.ranker.as_deref())?;
    let corpus = Corpus::open(&a.corpus)?;
    let queries: Vec<FeatureBundle> = (0..a.queries as u64)
        .map(|q| corpus.query(q).features)
        .collect();

    let started = Instant::now();
    let mut rows: Vec<BenchRow> = thread::scope(|s| {
        let handles: Vec<_> = (0..a.workers)
            .map(|w| {
                let (engine, queries) = (&engine, &queries);
                s.spawn(move || -> Result<Vec<BenchRow>> {
                    let mut out = Vec::new();
                    for q in (w..queries.len()).step_by(a.workers) {
                        let query = query_for(engine, queries[q].clone(), a.top_k, a.deadline_ms);
                        let t = Instant::now();
                        let outcome = engine.search(&query)?;
                        out.push(bench_row(
                            q as u64,
                            w,
                            t.elapsed().as_secs_f64() * 1e3,
                            outcome,
                        ));
                    }
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?
    .into_iter()
    .flatten()
    .collect();
    let elapsed = started.elapsed().as_secs_f64();
    rows.sort_by_key(|r| r.query_id);

    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w =
        csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;

    let wall: Vec<f64> = rows.iter().map(|r| r.wall_ms).collect();
    let cascade = LatencySummary::from_ms(&wall);
    let mut report = json!({
        "queries": rows.len(),
        "workers": a.workers,
        "throughput_qps": rows.len() as f64 / elapsed.max(1e-9),
        "latency": cascade,
        "partial": rows.iter().filter(|r| r.partial).count(),
        "csv": a.out,
    });
    if a.brute_force {
        let stored =
            stored_l1(engine.index()).context("--brute-force needs an index with raw vectors")?;
        let family = engine.index().manifest().l1_family();
        let (mut times, mut recall) = (Vec::with_capacity(rows.len()), 0.0);
        for r in &rows {
            let v = queries[r.query_id as usize]
                .embedding(family)
                .context("query lacks the Level-1 family")?;
            let t = Instant::now();
            let exact = brute_force(&stored, v, a.top_k);
            times.push(t.elapsed().as_secs_f64() * 1e3);
            recall += recall_at_k(&r.ids, &exact, a.top_k);
        }
        let brute = LatencySummary::from_ms(&times);
        report["brute_force"] = json!(brute);
        report["speedup_p50"] = json!(brute.p50_ms / cascade.p50_ms.max(1e-9));
        report["recall"] = json!(recall / rows.len().max(1) as f64);
    }
    emit(cli.json, "bench", report);
    Ok(())
}
