//! HTTP query service: image uploads, in-index ids or raw embeddings in,
//! ranked results out.

mod api;
pub mod cache;
pub mod config;

use std::net::SocketAddr;
use std::sync::Arc;

use log::info;

use vsearch_core::feature::PipelineConfig;
use vsearch_core::index::{load_index, Index};
use vsearch_core::rank::{FeatureRegistry, LinearScorer, RankingModel, RowScorer};
use vsearch_core::retrieve::Engine;
use vsearch_core::{Error, Result};

pub use api::{router, ApiError, SearchResponse};
pub use cache::{CacheKey, FeatureCache, LruCache};
pub use config::ServiceConfig;

/// Everything a request handler needs. The cache is the only mutable part.
pub struct AppState {
    pub engine: Engine,
    pub pipeline: Option<PipelineConfig>,
    pub cache: FeatureCache,
    pub config: ServiceConfig,
}

impl AppState {
    pub fn new(
        engine: Engine,
        pipeline: Option<PipelineConfig>,
        config: ServiceConfig,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(p) = &pipeline {
            check_pipeline(engine.index(), p)?;
        }
        Ok(Self {
            cache: FeatureCache::new(config.cache_capacity),
            engine,
            pipeline,
            config,
        })
    }

    /// Loads the index, ranker and pipeline named by `config`.
    pub fn load(config: ServiceConfig) -> Result<Self> {
        let index = Arc::new(load_index(&config.index_path)?);
        let registry = FeatureRegistry::for_manifest(index.manifest());
        let scorer: Arc<dyn RowScorer> = match &config.ranker {
            Some(path) => {
                let model = RankingModel::from_json(&std::fs::read(path)?)?;
                model.check_registry(&registry)?;
                Arc::new(model)
            }
            None => Arc::new(LinearScorer::distance_baseline(
                &registry,
                index.manifest().l1_family(),
            )?),
        };
        let pipeline = config
            .pipeline
            .as_ref()
            .map(PipelineConfig::from_file)
            .transpose()?;
        let engine = Engine::new(index, scorer)?;
        Self::new(engine, pipeline, config)
    }
}

/// Families the pipeline computes must have the dimensions the index expects.
fn check_pipeline(index: &Index, pipeline: &PipelineConfig) -> Result<()> {
    for spec in pipeline.families() {
        if let Some(f) = index.manifest().family(&spec.name) {
            if f.dim != spec.dim {
                return Err(Error::Config(format!(
                    "pipeline family {} has dim {}, index expects {}",
                    spec.name, spec.dim, f.dim
                )));
            }
        }
    }
    Ok(())
}

/// Binds `state.config.addr` and serves until ctrl-c.
pub async fn run(state: AppState) -> std::io::Result<()> {
    let addr: SocketAddr = state.config.addr.parse().map_err(|e| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("bad listen address: {e}"),
        )
    })?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Blocking entry point for the command line.
pub fn serve(state: AppState) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(run(state))
}
