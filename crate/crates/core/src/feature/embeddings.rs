//! Binary embedding files: `"EMB1"`, u32 dim, u64 count, then `count`
//! records of u64 image id followed by `dim` f32 values, all little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use log::info;

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSet {
    pub family: String,
    pub dim: usize,
    pub vectors: BTreeMap<u64, Vec<f32>>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], record: u64, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Load {
            record,
            reason: format!("truncated {what}"),
        },
        _ => Error::Io(e),
    })
}

/// Reads an embedding file. Header problems are reported as record 0.
pub fn read_embeddings(
    reader: impl Read,
    family: &str,
    expected_dim: Option<usize>,
) -> Result<EmbeddingSet> {
    let mut r = BufReader::new(reader);
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, 0, "header")?;
    if &magic != EMBEDDING_MAGIC {
        return Err(Error::Load {
            record: 0,
            reason: "bad magic, expected EMB1".into(),
        });
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    read_exact_or(&mut r, &mut b4, 0, "header")?;
    let dim = u32::from_le_bytes(b4) as usize;
    read_exact_or(&mut r, &mut b8, 0, "header")?;
    let count = u64::from_le_bytes(b8);
    if let Some(expected) = expected_dim {
        if expected != dim {
            return Err(Error::Load {
                record: 0,
                reason: format!("family {family} declares dim {expected}, file has {dim}"),
            });
        }
    }
    if dim == 0 {
        return Err(Error::Load {
            record: 0,
            reason: "zero dimension".into(),
        });
    }
    let mut vectors = BTreeMap::new();
    let mut raw = vec![0u8; dim * 4];
    for record in 0..count {
        read_exact_or(&mut r, &mut b8, record, "record id")?;
        let id = u64::from_le_bytes(b8);
        read_exact_or(&mut r, &mut raw, record, "record vector")?;
        let v: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Load {
                record,
                reason: format!("non-finite component (id {id})"),
            });
        }
        if vectors.insert(id, v).is_some() {
            return Err(Error::Load {
                record,
                reason: format!("duplicate id {id}"),
            });
        }
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(Error::Load {
            record: count,
            reason: "trailing bytes after last record".into(),
        });
    }
    info!("loaded {} {family} embeddings of dim {dim}", vectors.len());
    Ok(EmbeddingSet {
        family: family.to_string(),
        dim,
        vectors,
    })
}

pub fn load_embeddings(
    path: impl AsRef<Path>,
    family: &str,
    expected_dim: Option<usize>,
) -> Result<EmbeddingSet> {
    read_embeddings(File::open(path)?, family, expected_dim)
}

pub fn write_embeddings<'a>(
    writer: impl Write,
    dim: usize,
    records: impl ExactSizeIterator<Item = (u64, &'a [f32])>,
) -> Result<()> {
    let mut w = BufWriter::new(writer);
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for (id, v) in records {
        if v.len() != dim {
            return Err(Error::dim(dim, v.len()));
        }
        w.write_all(&id.to_le_bytes())?;
        for x in v {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_embeddings(path: impl AsRef<Path>, set: &EmbeddingSet) -> Result<()> {
    let records = set.vectors.iter().map(|(id, v)| (*id, v.as_slice()));
    write_embeddings(File::create(path)?, set.dim, records)
}
