use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;

use super::models::{IndexConfig, Models};
use super::shard::{DocMeta, FamilyStore, RawStore, Shard};
use super::{shard_assign, FamilyEntry, ImageDoc, Index, IndexManifest, INDEX_VERSION};
use crate::error::{Error, Result};
use crate::quantize::WordId;
use crate::rank::text::TextIdf;

struct FamilyColumns {
    subspaces: usize,
    dim: usize,
    code_present: Vec<bool>,
    codes: Vec<u8>,
    raw: Option<(Vec<bool>, Vec<f32>)>,
}

struct ShardBuilder {
    ids: Vec<u64>,
    meta: Vec<DocMeta>,
    words: Vec<Option<Vec<WordId>>>,
    families: BTreeMap<String, FamilyColumns>,
}

fn build_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

/// Encodes every document with the trained models and distributes them over
/// `config.shards` partitions.
pub fn build_index(
    docs: impl IntoIterator<Item = ImageDoc>,
    models: Arc<Models>,
    config: &IndexConfig,
) -> Result<Index> {
    config.validate()?;
    for f in &config.families {
        let m = models
            .families
            .get(&f.name)
            .ok_or_else(|| Error::config(format!("no trained models for family {}", f.name)))?;
        if m.pca.input_dim() != f.dim || m.pq.subspaces() != f.pq_subspaces {
            return Err(Error::config(format!(
                "models for family {} do not match its config",
                f.name
            )));
        }
    }
    let l1 = config.l1()?.name.clone();
    if models.l1_family != l1 || models.vw.dim() != config.vw_dim {
        return Err(Error::config(
            "visual-word model does not match the L1 config",
        ));
    }

    let mut builders: Vec<ShardBuilder> = (0..config.shards)
        .map(|_| ShardBuilder {
            ids: Vec::new(),
            meta: Vec::new(),
            words: Vec::new(),
            families: config
                .families
                .iter()
                .map(|f| {
                    let cols = FamilyColumns {
                        subspaces: f.pq_subspaces,
                        dim: f.dim,
                        code_present: Vec::new(),
                        codes: Vec::new(),
                        raw: config.store_raw.then(|| (Vec::new(), Vec::new())),
                    };
                    (f.name.clone(), cols)
                })
                .collect(),
        })
        .collect();

    let mut seen = HashSet::new();
    let mut reduced_buf: HashMap<String, Vec<f32>> = config
        .families
        .iter()
        .map(|f| (f.name.clone(), vec![0f32; f.reduced_dim()]))
        .collect();
    let mut count = 0usize;
    for doc in docs {
        if !seen.insert(doc.image_id) {
            return Err(Error::Build(format!("duplicate image id {}", doc.image_id)));
        }
        if let Some(unknown) = doc
            .features
            .embeddings
            .keys()
            .find(|k| config.family(k).is_none())
        {
            return Err(Error::config(format!(
                "document {} carries unknown feature family {unknown}",
                doc.image_id
            )));
        }
        let b = &mut builders[shard_assign(doc.image_id, config.shards)];
        let mut words = None;
        for (name, cols) in b.families.iter_mut() {
            let fm = &models.families[name];
            let v = doc.features.embeddings.get(name);
            let reduced = reduced_buf.get_mut(name).unwrap();
            match v {
                Some(v) => {
                    fm.pca.apply_into(v, reduced)?;
                    let start = cols.codes.len();
                    cols.codes.resize(start + cols.subspaces, 0);
                    fm.pq.encode_into(reduced, &mut cols.codes[start..])?;
                    cols.code_present.push(true);
                    if *name == l1 {
                        words = Some(models.vw.assign(&reduced[..models.vw.dim()])?.words);
                    }
                }
                None => {
                    cols.codes.resize(cols.codes.len() + cols.subspaces, 0);
                    cols.code_present.push(false);
                }
            }
            if let Some((present, values)) = cols.raw.as_mut() {
                match v {
                    Some(v) => {
                        present.push(true);
                        values.extend_from_slice(v);
                    }
                    None => {
                        present.push(false);
                        values.resize(values.len() + cols.dim, 0.0);
                    }
                }
            }
        }
        let features = doc.features;
        b.ids.push(doc.image_id);
        b.words.push(words);
        b.meta.push(DocMeta {
            image_id: doc.image_id,
            source_uri: doc.source_uri,
            metadata_text: doc.metadata_text,
            category: doc.category.or(features.category),
            phash: features.phash,
            digest: features.digest,
            dominant_color: features.dominant_color,
        });
        count += 1;
        if count.is_multiple_of(100_000) {
            info!("encoded {count} documents");
        }
    }

    let shards: Vec<Shard> = builders
        .into_iter()
        .enumerate()
        .map(|(i, b)| finish_shard(i as u32, b))
        .collect();
    let mut idf = TextIdf::default();
    for s in &shards {
        for m in &s.meta {
            idf.add(&m.metadata_text);
        }
    }
    let manifest = IndexManifest {
        version: INDEX_VERSION,
        shard_count: config.shards,
        digests: models.digests(),
        families: config
            .families
            .iter()
            .map(|f| FamilyEntry {
                name: f.name.clone(),
                dim: f.dim,
                role: f.role,
                pq_subspaces: f.pq_subspaces,
                pq_centroids: f.pq_centroids,
                raw_stored: config.store_raw,
            })
            .collect(),
        vw_books: config.vw_books,
        vw_vocab: config.vw_vocab,
        vw_dim: config.vw_dim,
        built_at: build_timestamp(),
        shards: Vec::new(),
    };
    info!("built index: {count} documents in {} shards", config.shards);
    Ok(Index {
        manifest,
        models,
        shards,
        idf,
    })
}

fn permute<T: Clone>(items: &[T], order: &[usize], width: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(items.len());
    for &i in order {
        out.extend_from_slice(&items[i * width..(i + 1) * width]);
    }
    out
}

fn finish_shard(id: u32, b: ShardBuilder) -> Shard {
    let mut order: Vec<usize> = (0..b.ids.len()).collect();
    order.sort_by_key(|&i| b.ids[i]);
    let ids = permute(&b.ids, &order, 1);
    let positions = ids
        .iter()
        .enumerate()
        .map(|(p, &id)| (id, p as u32))
        .collect();
    let mut postings: HashMap<WordId, Vec<u64>> = HashMap::new();
    for &i in &order {
        if let Some(words) = &b.words[i] {
            for w in words {
                postings.entry(*w).or_default().push(b.ids[i]);
            }
        }
    }
    let families = b
        .families
        .into_iter()
        .map(|(name, c)| {
            let store = FamilyStore {
                subspaces: c.subspaces,
                dim: c.dim,
                code_present: permute(&c.code_present, &order, 1),
                codes: permute(&c.codes, &order, c.subspaces),
                raw: c.raw.map(|(present, values)| RawStore {
                    present: permute(&present, &order, 1),
                    values: permute(&values, &order, c.dim),
                }),
            };
            (name, store)
        })
        .collect();
    let meta = order.iter().map(|&i| b.meta[i].clone()).collect();
    Shard {
        id,
        ids,
        positions,
        postings,
        families,
        meta,
    }
}
