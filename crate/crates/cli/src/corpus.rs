//! A corpus directory holds either a synthetic generator spec
//! (`corpus.json`) or extracted documents (`docs.jsonl`, one `ImageDoc`
//! per line).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use vsearch_core::index::{stride_sample, FamilyConfig, FamilyRole, ImageDoc, IndexConfig};
use vsearch_core::quantize::pq::PQ_SUB_DIM;
use vsearch_core::synth::{CorpusSpec, SyntheticCorpus};

pub const SPEC_FILE: &str = "corpus.json";
pub const DOCS_FILE: &str = "docs.jsonl";

pub enum Corpus {
    Synthetic(SyntheticCorpus),
    Docs(Vec<ImageDoc>),
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Self> {
        let spec = dir.join(SPEC_FILE);
        if spec.exists() {
            let spec: CorpusSpec = serde_json::from_reader(BufReader::new(File::open(&spec)?))
                .with_context(|| format!("reading {}", spec.display()))?;
            return Ok(Corpus::Synthetic(SyntheticCorpus::new(spec)?));
        }
        let docs = dir.join(DOCS_FILE);
        if docs.exists() {
            return Ok(Corpus::Docs(read_docs(&docs)?));
        }
        bail!("{} has neither {SPEC_FILE} nor {DOCS_FILE}", dir.display())
    }

    pub fn len(&self) -> usize {
        match self {
            Corpus::Synthetic(c) => c.len(),
            Corpus::Docs(d) => d.len(),
        }
    }

    pub fn docs(&self) -> Box<dyn Iterator<Item = ImageDoc> + '_> {
        match self {
            Corpus::Synthetic(c) => Box::new(c.docs()),
            Corpus::Docs(d) => Box::new(d.iter().cloned()),
        }
    }

    pub fn synthetic(&self) -> Option<&SyntheticCorpus> {
        match self {
            Corpus::Synthetic(c) => Some(c),
            Corpus::Docs(_) => None,
        }
    }

    /// The `i`-th document; for synthetic corpora this is also its id.
    pub fn doc(&self, i: u64) -> ImageDoc {
        match self {
            Corpus::Synthetic(c) => c.doc(i),
            Corpus::Docs(d) => d[i as usize].clone(),
        }
    }

    /// Query `i`: a fresh generator sample, or document `i mod n`.
    pub fn query(&self, i: u64) -> ImageDoc {
        match self {
            Corpus::Synthetic(c) => c.query(i),
            Corpus::Docs(d) => d[(i % d.len() as u64) as usize].clone(),
        }
    }

    /// Label used to pick triplet positives: cluster or category.
    pub fn group(&self, doc: &ImageDoc) -> String {
        match self {
            Corpus::Synthetic(c) => c.cluster_of(doc.image_id).to_string(),
            Corpus::Docs(_) => doc.category.clone().unwrap_or_default(),
        }
    }

    pub fn training_sample(&self, cap: usize) -> BTreeMap<String, Vec<Vec<f32>>> {
        match self {
            Corpus::Synthetic(c) => c.training_sample(cap),
            Corpus::Docs(d) => {
                let mut out: BTreeMap<String, Vec<Vec<f32>>> = BTreeMap::new();
                for doc in stride_sample(d, cap) {
                    for (f, v) in doc.features.embeddings {
                        out.entry(f).or_default().push(v);
                    }
                }
                out
            }
        }
    }

    /// Every family in the corpus; `l1` (or the synthetic primary family,
    /// or the first family by name) is Level 1.
    pub fn index_config(&self, l1: Option<&str>) -> Result<IndexConfig> {
        match self {
            Corpus::Synthetic(c) => {
                let config = c.index_config(1, true);
                if let Some(name) = l1 {
                    if config.l1()?.name != name {
                        bail!(
                            "synthetic corpora use {} as Level-1 family",
                            config.l1()?.name
                        );
                    }
                }
                Ok(config)
            }
            Corpus::Docs(d) => {
                let first = d.first().context("corpus has no documents")?;
                let names: Vec<&String> = first.features.embeddings.keys().collect();
                let l1 = match l1 {
                    Some(n) => names
                        .iter()
                        .find(|x| x.as_str() == n)
                        .map(|x| x.as_str())
                        .with_context(|| format!("family {n} not in corpus (have {names:?})"))?,
                    None => names
                        .first()
                        .context("documents carry no embeddings")?
                        .as_str(),
                };
                let families = first
                    .features
                    .embeddings
                    .iter()
                    .map(|(name, v)| {
                        let role = if name == l1 {
                            FamilyRole::L1
                        } else {
                            FamilyRole::L2
                        };
                        let mut f = FamilyConfig::new(name.clone(), v.len(), role);
                        f.pq_subspaces = f.pq_subspaces.min(v.len() / PQ_SUB_DIM).max(1);
                        f
                    })
                    .collect();
                Ok(IndexConfig::new(families))
            }
        }
    }
}

pub fn read_docs(path: &Path) -> Result<Vec<ImageDoc>> {
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(docs)
}

pub fn write_docs<'a>(path: &Path, docs: impl IntoIterator<Item = &'a ImageDoc>) -> Result<usize> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut n = 0;
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}
