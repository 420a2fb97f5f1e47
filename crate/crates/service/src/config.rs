use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vsearch_core::retrieve::DEFAULT_TOP_K;
use vsearch_core::{Error, Result};

/// Service settings. Relative paths in a config file resolve against the
/// file's directory.
///
/// ```toml
/// addr = "127.0.0.1:8080"
/// index_path = "index"
/// cache_capacity = 256
/// default_deadline_ms = 2000
/// pipeline = "pipeline.conf"   # optional, enables image uploads
/// ranker = "ranker.json"       # optional, else a distance baseline
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub addr: String,
    pub index_path: PathBuf,
    pub cache_capacity: usize,
    /// Applied when a request carries no deadline; `None` waits for every shard.
    pub default_deadline_ms: Option<u64>,
    pub default_top_k: usize,
    pub max_top_k: usize,
    pub pipeline: Option<PathBuf>,
    pub ranker: Option<PathBuf>,
    /// Request body limit for uploads.
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            index_path: PathBuf::from("index"),
            cache_capacity: 256,
            default_deadline_ms: Some(2000),
            default_top_k: DEFAULT_TOP_K,
            max_top_k: 1000,
            pipeline: None,
            ranker: None,
            max_upload_bytes: 32 << 20,
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut config: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.index_path);
        config.pipeline.as_mut().map(resolve);
        config.ranker.as_mut().map(resolve);
        Ok(config)
    }

    /// Applies `SERVICE_ADDR` and `INDEX_PATH` from `lookup`.
    pub fn with_env(mut self, lookup: impl Fn(&str) -> Option<String>) -> Self {
        if let Some(addr) = lookup("SERVICE_ADDR") {
            self.addr = addr;
        }
        if let Some(path) = lookup("INDEX_PATH") {
            self.index_path = PathBuf::from(path);
        }
        self
    }

    pub fn from_process_env(self) -> Self {
        self.with_env(|k| std::env::var(k).ok().filter(|v| !v.is_empty()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.default_top_k == 0 || self.default_top_k > self.max_top_k {
            return Err(Error::Config(
                "default_top_k must be in 1..=max_top_k".into(),
            ));
        }
        if self.default_deadline_ms == Some(0) {
            return Err(Error::Config("default_deadline_ms must be positive".into()));
        }
        Ok(())
    }
}
