//! The three ranking levels, each runnable on its own.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::index::{Index, Shard};
use crate::quantize::{DistanceTable, VisualWordSet};
use crate::rank::{assemble_feature_row, QueryRowContext, RowScorer};

use super::RankedResult;

/// Ids sharing at least `m_match` words with the query, ascending.
pub fn level0_match(words: &VisualWordSet, shard: &Shard, m_match: usize) -> Vec<u64> {
    let m_match = m_match.max(1);
    let mut hits: Vec<u64> = Vec::new();
    for &w in &words.words {
        hits.extend_from_slice(shard.postings_lookup(w));
    }
    hits.sort_unstable();
    let mut out = Vec::new();
    let mut i = 0;
    while i < hits.len() {
        let mut j = i + 1;
        while j < hits.len() && hits[j] == hits[i] {
            j += 1;
        }
        if j - i >= m_match {
            out.push(hits[i]);
        }
        i = j;
    }
    out
}

fn by_distance(a: &(u64, f32), b: &(u64, f32)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// Top `keep` candidates by ADC distance to the query, ties by id. Returns
/// the ranked list and the number of candidates skipped for lacking a code.
pub fn level1_rank(
    candidates: &[u64],
    table: &DistanceTable,
    shard: &Shard,
    family: &str,
    keep: usize,
) -> Result<(Vec<(u64, f32)>, usize)> {
    let store = shard
        .family(family)
        .ok_or_else(|| Error::config(format!("shard {} has no family {family}", shard.id())))?;
    let mut scored = Vec::with_capacity(candidates.len());
    let mut skipped = 0;
    for &id in candidates {
        let code = shard.position(id).and_then(|p| store.code(p));
        match code {
            Some(code) => scored.push((id, table.adc_distance(code)?)),
            None => skipped += 1,
        }
    }
    Ok((top_by_distance(scored, keep), skipped))
}

/// Sorted prefix of length `keep`, without sorting the tail.
pub(crate) fn top_by_distance(mut scored: Vec<(u64, f32)>, keep: usize) -> Vec<(u64, f32)> {
    if keep == 0 {
        return Vec::new();
    }
    if scored.len() > keep {
        scored.select_nth_unstable_by(keep - 1, by_distance);
        scored.truncate(keep);
    }
    scored.sort_unstable_by(by_distance);
    scored
}

/// Scores Level-1 survivors with the full feature row and sorts them by
/// score descending, then L1 distance, then id.
pub fn level2_rank(
    candidates: &[(u64, f32)],
    ctx: &QueryRowContext<'_>,
    index: &Index,
    scorer: &dyn RowScorer,
) -> Result<Vec<RankedResult>> {
    if scorer.arity() != ctx.registry().len() {
        return Err(Error::dim(ctx.registry().len(), scorer.arity()));
    }
    let mut out = Vec::with_capacity(candidates.len());
    for &(id, l1) in candidates {
        let (s, pos) = index.locate(id).ok_or(Error::UnknownDoc(id))?;
        let shard = index.shard(s);
        let row = assemble_feature_row(ctx, shard, pos, l1);
        let meta = shard.meta(pos);
        out.push(RankedResult {
            doc_id: id,
            score: scorer.score(&row.values)?,
            l1_distance: l1,
            source_uri: meta.source_uri.clone(),
            metadata_text: meta.metadata_text.clone(),
            dedup_group: None,
        });
    }
    sort_results(&mut out);
    Ok(out)
}

pub(crate) fn sort_results(results: &mut [RankedResult]) {
    results.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.l1_distance.total_cmp(&b.l1_distance))
            .then(a.doc_id.cmp(&b.doc_id))
    });
}
