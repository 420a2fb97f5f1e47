//! Static feature pipeline configuration.
//!
//! Plain `key = value` lines; `#` starts a comment:
//!
//! ```text
//! family.color_hist = builtin:color_hist
//! family.resnet     = external:2048
//! family.learned    = triplet:learned.json:color_hist
//! l1_family         = resnet
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::feature::color::HIST_DIM;
use crate::feature::triplet::TripletEmbeddingModel;
use crate::math::digest_hex;

pub const COLOR_HIST_FAMILY: &str = "color_hist";

#[derive(Debug, Clone, PartialEq)]
pub enum FamilySource {
    /// The 192-d grid color histogram computed from pixels.
    ColorHist,
    /// Computed elsewhere and ingested through embedding files.
    External,
    /// A trained linear embedding applied to another computed family.
    Triplet {
        model: Arc<TripletEmbeddingModel>,
        input: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilySpec {
    pub name: String,
    pub dim: usize,
    pub source: FamilySource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    families: Vec<FamilySpec>,
    l1_family: String,
    digest: String,
}

impl PipelineConfig {
    /// Histogram-only pipeline with the histogram as Level-1 family.
    pub fn color_only() -> Self {
        Self::parse(
            "family.color_hist = builtin:color_hist\nl1_family = color_hist\n",
            Path::new("."),
        )
        .expect("built-in config parses")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses config text; model paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected key = value", lineno + 1))
            })?;
            if entries
                .insert(k.trim().to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(Error::config(format!(
                    "line {}: duplicate key {}",
                    lineno + 1,
                    k.trim()
                )));
            }
        }

        let mut canonical = String::new();
        let mut families = Vec::new();
        let mut l1_family = None;
        for (key, value) in &entries {
            canonical.push_str(&format!("{key}={value}\n"));
            if key == "l1_family" {
                l1_family = Some(value.clone());
            } else if let Some(name) = key.strip_prefix("family.") {
                families.push((name.to_string(), value.clone()));
            } else {
                return Err(Error::config(format!("unknown key {key}")));
            }
        }

        let mut specs: Vec<FamilySpec> = Vec::new();
        // Built-in and external families first so triplet inputs resolve.
        let mut pending = Vec::new();
        for (name, value) in families {
            let mut parts = value.split(':');
            match parts.next() {
                Some("builtin") => match parts.next() {
                    Some("color_hist") => specs.push(FamilySpec {
                        name,
                        dim: HIST_DIM,
                        source: FamilySource::ColorHist,
                    }),
                    other => return Err(Error::config(format!("unknown builtin {other:?}"))),
                },
                Some("external") => {
                    let dim = parts
                        .next()
                        .and_then(|d| d.parse::<usize>().ok())
                        .filter(|&d| d > 0)
                        .ok_or_else(|| {
                            Error::config(format!("family {name}: bad dim in {value}"))
                        })?;
                    specs.push(FamilySpec {
                        name,
                        dim,
                        source: FamilySource::External,
                    });
                }
                Some("triplet") => {
                    let file = parts.next().ok_or_else(|| {
                        Error::config(format!("family {name}: missing model path"))
                    })?;
                    let input = parts.next().ok_or_else(|| {
                        Error::config(format!("family {name}: missing input family"))
                    })?;
                    let bytes = std::fs::read(base_dir.join(file))?;
                    canonical.push_str(&format!("model:{name}={}\n", digest_hex(&bytes)));
                    let model: TripletEmbeddingModel = serde_json::from_slice(&bytes)?;
                    pending.push((name, input.to_string(), model));
                }
                _ => {
                    return Err(Error::config(format!(
                        "family {name}: unknown source {value}"
                    )))
                }
            }
        }
        for (name, input, model) in pending {
            let input_spec = specs.iter().find(|s| s.name == input).ok_or_else(|| {
                Error::config(format!("family {name}: unknown input family {input}"))
            })?;
            if input_spec.source == FamilySource::External {
                return Err(Error::config(format!(
                    "family {name}: input {input} is not computed from pixels"
                )));
            }
            if input_spec.dim != model.input_dim {
                return Err(Error::dim(input_spec.dim, model.input_dim));
            }
            specs.push(FamilySpec {
                name,
                dim: model.output_dim,
                source: FamilySource::Triplet {
                    model: Arc::new(model),
                    input,
                },
            });
        }

        let l1_family = l1_family.ok_or_else(|| Error::config("l1_family is required"))?;
        if !specs.iter().any(|s| s.name == l1_family) {
            return Err(Error::config(format!(
                "l1_family {l1_family} is not a declared family"
            )));
        }
        Ok(Self {
            families: specs,
            l1_family,
            digest: digest_hex(canonical.as_bytes()),
        })
    }

    pub fn families(&self) -> &[FamilySpec] {
        &self.families
    }

    pub fn family(&self, name: &str) -> Option<&FamilySpec> {
        self.families.iter().find(|f| f.name == name)
    }

    pub fn l1_family(&self) -> &str {
        &self.l1_family
    }

    /// Digest over the canonical key/value set and referenced model files.
    pub fn digest(&self) -> &str {
        &self.digest
    }
}
