//! On-disk layout:
//!
//! ```text
//! manifest.json
//! models/pca.<family>.bin  models/pq.<family>.pqc  models/vw.vwc
//! shard_<i>.postings  shard_<i>.codes.<family>  shard_<i>.feat.<family>  shard_<i>.meta
//! ```
//!
//! Shard files start with a 4-byte magic, a u32 version and the combined
//! model digest, and end with an FNV-1a checksum of everything before it.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::info;

use super::models::{FamilyModels, Models};
use super::shard::{DocMeta, FamilyStore, RawStore, Shard};
use super::{FileEntry, Index, IndexManifest, ShardManifest, INDEX_VERSION};
use crate::error::{Error, Result};
use crate::feature::{DominantColor, PcaModel};
use crate::io::{ByteReader, ByteWriter};
use crate::math::{digest_hex, fnv1a64};
use crate::quantize::{PqCodebook, VisualWordCodebook, WordId};
use crate::rank::text::TextIdf;

pub const MANIFEST_FILE: &str = "manifest.json";
const MODELS_DIR: &str = "models";
const POSTINGS_MAGIC: &[u8; 4] = b"VSPL";
const CODES_MAGIC: &[u8; 4] = b"VSCD";
const FEAT_MAGIC: &[u8; 4] = b"VSFT";
const META_MAGIC: &[u8; 4] = b"VSMT";

fn seal(mut w: ByteWriter) -> Vec<u8> {
    let mut bytes = std::mem::take(&mut w).into_inner();
    let sum = fnv1a64(&bytes);
    bytes.extend_from_slice(&sum.to_le_bytes());
    bytes
}

/// Verifies header, model digest and checksum; returns a reader positioned
/// after the header.
fn open_sealed<'a>(bytes: &'a [u8], magic: &[u8; 4], digest: &str) -> Result<ByteReader<'a>> {
    if bytes.len() < 8 {
        return Err(Error::Format("file too short".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 8);
    if fnv1a64(body) != u64::from_le_bytes(sum.try_into().unwrap()) {
        return Err(Error::Format(
            "checksum mismatch (truncated or corrupted)".into(),
        ));
    }
    let mut r = ByteReader::new(body);
    r.header(magic, INDEX_VERSION)?;
    let stamped = r.str()?;
    if stamped != digest {
        return Err(Error::Format(format!(
            "model digest {stamped} does not match manifest {digest}"
        )));
    }
    Ok(r)
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<FileEntry> {
    fs::write(dir.join(name), bytes)?;
    Ok(FileEntry {
        file: name.to_string(),
        bytes: bytes.len() as u64,
    })
}

fn opt_str(w: &mut ByteWriter, v: &Option<String>) {
    match v {
        Some(s) => {
            w.u8(1);
            w.str(s);
        }
        None => w.u8(0),
    }
}

fn encode_meta(m: &DocMeta) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.u64(m.image_id);
    w.str(&m.source_uri);
    w.str(&m.metadata_text);
    opt_str(&mut w, &m.category);
    match m.phash {
        Some(h) => {
            w.u8(1);
            w.u64(h);
        }
        None => w.u8(0),
    }
    match m.digest {
        Some(d) => {
            w.u8(1);
            w.u128(d);
        }
        None => w.u8(0),
    }
    match m.dominant_color {
        Some(c) => {
            w.u8(1);
            w.f32s(&c.rgb);
            w.f32(c.weight);
        }
        None => w.u8(0),
    }
    w.into_inner()
}

fn flag(r: &mut ByteReader) -> Result<bool> {
    match r.u8()? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::Format(format!("bad presence flag {v}"))),
    }
}

fn decode_meta(bytes: &[u8]) -> Result<DocMeta> {
    let mut r = ByteReader::new(bytes);
    let image_id = r.u64()?;
    let source_uri = r.str()?;
    let metadata_text = r.str()?;
    let category = if flag(&mut r)? { Some(r.str()?) } else { None };
    let phash = if flag(&mut r)? { Some(r.u64()?) } else { None };
    let digest = if flag(&mut r)? { Some(r.u128()?) } else { None };
    let dominant_color = if flag(&mut r)? {
        let v = r.f32s(3)?;
        Some(DominantColor {
            rgb: [v[0], v[1], v[2]],
            weight: r.f32()?,
        })
    } else {
        None
    };
    r.finish()?;
    Ok(DocMeta {
        image_id,
        source_uri,
        metadata_text,
        category,
        phash,
        digest,
        dominant_color,
    })
}

fn save_shard(dir: &Path, shard: &Shard, digest: &str) -> Result<ShardManifest> {
    let i = shard.id;

    let mut w = ByteWriter::with_header(POSTINGS_MAGIC, INDEX_VERSION);
    w.str(digest);
    let mut words: Vec<_> = shard.postings.keys().copied().collect();
    words.sort();
    w.u32(words.len() as u32);
    for word in words {
        let ids = &shard.postings[&word];
        let mut body = ByteWriter::default();
        let mut prev = 0u64;
        for (j, &id) in ids.iter().enumerate() {
            body.varint(if j == 0 { id } else { id - prev });
            prev = id;
        }
        w.u32(word.0);
        w.u32(ids.len() as u32);
        w.u32(body.len() as u32);
        w.bytes(&body.into_inner());
    }
    let postings = write_file(dir, &format!("shard_{i}.postings"), &seal(w))?;

    let mut codes = BTreeMap::new();
    let mut features = BTreeMap::new();
    for (name, store) in &shard.families {
        let mut w = ByteWriter::with_header(CODES_MAGIC, INDEX_VERSION);
        w.str(digest);
        w.u32(store.subspaces as u32);
        w.u64(shard.ids.len() as u64);
        for p in 0..shard.ids.len() {
            w.u8(store.code_present[p] as u8);
            w.bytes(&store.codes[p * store.subspaces..(p + 1) * store.subspaces]);
        }
        codes.insert(
            name.clone(),
            write_file(dir, &format!("shard_{i}.codes.{name}"), &seal(w))?,
        );

        if let Some(raw) = &store.raw {
            let mut w = ByteWriter::with_header(FEAT_MAGIC, INDEX_VERSION);
            w.str(digest);
            w.u32(store.dim as u32);
            w.u64(shard.ids.len() as u64);
            for p in 0..shard.ids.len() {
                w.u8(raw.present[p] as u8);
                w.f32s(&raw.values[p * store.dim..(p + 1) * store.dim]);
            }
            features.insert(
                name.clone(),
                write_file(dir, &format!("shard_{i}.feat.{name}"), &seal(w))?,
            );
        }
    }

    let mut w = ByteWriter::with_header(META_MAGIC, INDEX_VERSION);
    w.str(digest);
    w.u64(shard.meta.len() as u64);
    for m in &shard.meta {
        let rec = encode_meta(m);
        w.u32(rec.len() as u32);
        w.bytes(&rec);
    }
    let meta = write_file(dir, &format!("shard_{i}.meta"), &seal(w))?;

    Ok(ShardManifest {
        shard_id: i,
        doc_count: shard.ids.len() as u64,
        posting_count: shard.postings.len() as u64,
        model_digest: digest.to_string(),
        postings,
        codes,
        features,
        meta,
    })
}

/// Writes the index and its models under `dir` (created if missing) and
/// returns the manifest that was written.
pub fn save_index(index: &Index, dir: impl AsRef<Path>) -> Result<IndexManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join(MODELS_DIR))?;
    let models_dir = dir.join(MODELS_DIR);
    for (name, m) in &index.models.families {
        fs::write(models_dir.join(format!("pca.{name}.bin")), m.pca.to_bytes())?;
        fs::write(models_dir.join(format!("pq.{name}.pqc")), m.pq.to_bytes())?;
    }
    fs::write(models_dir.join("vw.vwc"), index.models.vw.to_bytes())?;

    let digest = index.manifest.digests.combined();
    let mut manifest = index.manifest.clone();
    manifest.shards = index
        .shards
        .iter()
        .map(|s| save_shard(dir, s, &digest))
        .collect::<Result<_>>()?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    info!(
        "saved index with {} documents to {}",
        index.doc_count(),
        dir.display()
    );
    Ok(manifest)
}

fn read_checked(dir: &Path, entry: &FileEntry) -> Result<Vec<u8>> {
    let bytes = fs::read(dir.join(&entry.file))?;
    if bytes.len() as u64 != entry.bytes {
        return Err(Error::Format(format!(
            "{} has {} bytes, manifest says {}",
            entry.file,
            bytes.len(),
            entry.bytes
        )));
    }
    Ok(bytes)
}

fn load_models(dir: &Path, manifest: &IndexManifest) -> Result<Models> {
    let models_dir = dir.join(MODELS_DIR);
    let mut families = BTreeMap::new();
    for f in &manifest.families {
        let pca_bytes = fs::read(models_dir.join(format!("pca.{}.bin", f.name)))?;
        let pq_bytes = fs::read(models_dir.join(format!("pq.{}.pqc", f.name)))?;
        if manifest.digests.pca.get(&f.name) != Some(&digest_hex(&pca_bytes)) {
            return Err(Error::Format(format!(
                "PCA model for {} does not match the manifest digest",
                f.name
            )));
        }
        if manifest.digests.pq.get(&f.name) != Some(&digest_hex(&pq_bytes)) {
            return Err(Error::Format(format!(
                "PQ codebook for {} does not match the manifest digest",
                f.name
            )));
        }
        let pca = PcaModel::from_bytes(&pca_bytes)?;
        let pq = PqCodebook::from_bytes(&pq_bytes)?;
        if pca.input_dim() != f.dim
            || pq.subspaces() != f.pq_subspaces
            || pq.source_dim() != pca.output_dim()
        {
            return Err(Error::Format(format!(
                "models for {} do not match the family registry",
                f.name
            )));
        }
        families.insert(f.name.clone(), FamilyModels { pca, pq });
    }
    let vw_bytes = fs::read(models_dir.join("vw.vwc"))?;
    if digest_hex(&vw_bytes) != manifest.digests.vw {
        return Err(Error::Format(
            "visual-word codebook does not match the manifest digest".into(),
        ));
    }
    let vw = VisualWordCodebook::from_bytes(&vw_bytes)?;
    if vw.dim() != manifest.vw_dim || vw.books() != manifest.vw_books {
        return Err(Error::Format(
            "visual-word codebook shape does not match the manifest".into(),
        ));
    }
    Ok(Models {
        families,
        vw,
        l1_family: manifest.l1_family().to_string(),
    })
}

fn load_shard(
    dir: &Path,
    sm: &ShardManifest,
    manifest: &IndexManifest,
    models: &Models,
) -> Result<Shard> {
    let digest = manifest.digests.combined();
    if sm.model_digest != digest {
        return Err(Error::Format("shard references different models".into()));
    }
    let n_docs = sm.doc_count as usize;

    let bytes = read_checked(dir, &sm.meta)?;
    let mut r = open_sealed(&bytes, META_MAGIC, &digest)?;
    if r.u64()? != sm.doc_count {
        return Err(Error::Format(
            "metadata record count disagrees with manifest".into(),
        ));
    }
    let mut meta = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let len = r.u32()? as usize;
        meta.push(decode_meta(r.take(len)?)?);
    }
    r.finish()?;
    let ids: Vec<u64> = meta.iter().map(|m| m.image_id).collect();
    if ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Format("metadata records out of order".into()));
    }
    let positions: HashMap<u64, u32> = ids
        .iter()
        .enumerate()
        .map(|(p, &id)| (id, p as u32))
        .collect();

    let bytes = read_checked(dir, &sm.postings)?;
    let mut r = open_sealed(&bytes, POSTINGS_MAGIC, &digest)?;
    let words = r.u32()? as usize;
    if words as u64 != sm.posting_count {
        return Err(Error::Format(
            "posting count disagrees with manifest".into(),
        ));
    }
    let mut postings = HashMap::with_capacity(words);
    for _ in 0..words {
        let word = WordId(r.u32()?);
        let count = r.u32()? as usize;
        let len = r.u32()? as usize;
        let mut body = ByteReader::new(r.take(len)?);
        let mut list = Vec::with_capacity(count);
        let mut prev = 0u64;
        for j in 0..count {
            let delta = body.varint()?;
            if j > 0 && delta == 0 {
                return Err(Error::Format(format!(
                    "posting list {} not strictly ascending",
                    word.0
                )));
            }
            prev = if j == 0 {
                delta
            } else {
                prev.checked_add(delta)
                    .ok_or_else(|| Error::Format("posting overflow".into()))?
            };
            if !positions.contains_key(&prev) {
                return Err(Error::Format(format!(
                    "posting references unknown doc {prev}"
                )));
            }
            list.push(prev);
        }
        body.finish()?;
        if word.book() >= manifest.vw_books || word.centroid() >= manifest.vw_vocab {
            return Err(Error::Format(format!(
                "word {} outside the vocabulary",
                word.0
            )));
        }
        postings.insert(word, list);
    }
    r.finish()?;

    let mut families = BTreeMap::new();
    for f in &manifest.families {
        let fm = &models.families[&f.name];
        let entry = sm
            .codes
            .get(&f.name)
            .ok_or_else(|| Error::Format(format!("no code file for {}", f.name)))?;
        let bytes = read_checked(dir, entry)?;
        let mut r = open_sealed(&bytes, CODES_MAGIC, &digest)?;
        let subspaces = r.u32()? as usize;
        if subspaces != f.pq_subspaces || r.u64()? != sm.doc_count {
            return Err(Error::Format(format!(
                "code file for {} has the wrong shape",
                f.name
            )));
        }
        let mut code_present = Vec::with_capacity(n_docs);
        let mut codes = Vec::with_capacity(n_docs * subspaces);
        for _ in 0..n_docs {
            let present = flag(&mut r)?;
            let code = r.take(subspaces)?;
            if present {
                fm.pq.check_code(code)?;
            }
            code_present.push(present);
            codes.extend_from_slice(code);
        }
        r.finish()?;

        let raw = match sm.features.get(&f.name) {
            Some(entry) => {
                let bytes = read_checked(dir, entry)?;
                let mut r = open_sealed(&bytes, FEAT_MAGIC, &digest)?;
                if r.u32()? as usize != f.dim || r.u64()? != sm.doc_count {
                    return Err(Error::Format(format!(
                        "feature file for {} has the wrong shape",
                        f.name
                    )));
                }
                let mut present = Vec::with_capacity(n_docs);
                let mut values = Vec::with_capacity(n_docs * f.dim);
                for _ in 0..n_docs {
                    present.push(flag(&mut r)?);
                    values.extend(r.f32s(f.dim)?);
                }
                r.finish()?;
                Some(RawStore { present, values })
            }
            None if f.raw_stored => {
                return Err(Error::Format(format!(
                    "missing raw feature file for {}",
                    f.name
                )))
            }
            None => None,
        };
        families.insert(
            f.name.clone(),
            FamilyStore {
                subspaces,
                dim: f.dim,
                code_present,
                codes,
                raw,
            },
        );
    }

    Ok(Shard {
        id: sm.shard_id,
        ids,
        positions,
        postings,
        families,
        meta,
    })
}

/// Loads and fully validates an index directory. Any inconsistency aborts
/// the load; nothing is returned partially.
pub fn load_index(dir: impl AsRef<Path>) -> Result<Index> {
    let dir = dir.as_ref();
    let manifest: IndexManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.version != INDEX_VERSION {
        return Err(Error::Format(format!(
            "unsupported index version {}",
            manifest.version
        )));
    }
    if manifest.shards.len() != manifest.shard_count || manifest.shard_count == 0 {
        return Err(Error::Format(
            "manifest shard list does not match shard count".into(),
        ));
    }
    let models = load_models(dir, &manifest)?;
    let mut shards = Vec::with_capacity(manifest.shard_count);
    for (i, sm) in manifest.shards.iter().enumerate() {
        if sm.shard_id as usize != i {
            return Err(Error::Format(format!(
                "shard entry {i} has id {}",
                sm.shard_id
            )));
        }
        let shard = load_shard(dir, sm, &manifest, &models).map_err(|e| match e {
            Error::Format(reason) => Error::Integrity {
                shard: sm.shard_id,
                reason,
            },
            Error::CorruptCode { .. } => Error::Integrity {
                shard: sm.shard_id,
                reason: e.to_string(),
            },
            other => other,
        })?;
        if shard
            .ids
            .iter()
            .any(|&id| super::shard_assign(id, manifest.shard_count) != i)
        {
            return Err(Error::Integrity {
                shard: sm.shard_id,
                reason: "document in the wrong shard".into(),
            });
        }
        shards.push(shard);
    }
    let mut idf = TextIdf::default();
    for s in &shards {
        for m in &s.meta {
            idf.add(&m.metadata_text);
        }
    }
    info!("loaded index from {}", dir.display());
    Ok(Index {
        manifest,
        models: Arc::new(models),
        shards,
        idf,
    })
}
