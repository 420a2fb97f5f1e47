//! Per-shard L0 + L1 fan-out and merge.

use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::warn;

use super::cascade::{level0_match, level1_rank, top_by_distance};
use super::{CascadeConfig, Diagnostics};
use crate::error::{Error, Result};
use crate::index::{Index, Shard};
use crate::quantize::{DistanceTable, VisualWordSet};

/// Returns an artificial delay for a shard id. Test hook only.
pub type FaultHook = Arc<dyn Fn(u32) -> Option<Duration> + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub struct ShardResponse {
    pub shard_id: u32,
    /// Ascending by distance, ties by id.
    pub candidates: Vec<(u64, f32)>,
    pub complete: bool,
    pub l0_count: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gathered {
    pub candidates: Vec<(u64, f32)>,
    pub l0_count: usize,
    pub skipped: usize,
    pub timed_out: Vec<u32>,
}

fn run_shard(
    shard: &Shard,
    words: &VisualWordSet,
    table: &DistanceTable,
    cascade: &CascadeConfig,
    fault: Option<&FaultHook>,
) -> Result<ShardResponse> {
    if let Some(delay) = fault.and_then(|f| f(shard.id())) {
        thread::sleep(delay);
    }
    let l0 = level0_match(words, shard, cascade.m_match);
    let (candidates, skipped) =
        level1_rank(&l0, table, shard, &cascade.l1_family, cascade.l1_keep)?;
    Ok(ShardResponse {
        shard_id: shard.id(),
        candidates,
        complete: true,
        l0_count: l0.len(),
        skipped,
    })
}

fn merge(mut responses: Vec<ShardResponse>, keep: usize, timed_out: Vec<u32>) -> Gathered {
    responses.sort_by_key(|r| r.shard_id);
    let l0_count = responses.iter().map(|r| r.l0_count).sum();
    let skipped = responses.iter().map(|r| r.skipped).sum();
    let all: Vec<(u64, f32)> = responses.into_iter().flat_map(|r| r.candidates).collect();
    Gathered {
        candidates: top_by_distance(all, keep),
        l0_count,
        skipped,
        timed_out,
    }
}

/// Runs L0 + L1 on every shard concurrently and keeps the global top
/// `l1_keep`. With a deadline, shards that have not answered in time are
/// dropped and reported in `timed_out`; if none answers the call fails with
/// [`Error::AllShardsTimedOut`].
pub fn scatter_gather(
    index: &Arc<Index>,
    words: Arc<VisualWordSet>,
    table: Arc<DistanceTable>,
    cascade: &CascadeConfig,
    deadline: Option<Duration>,
    fault: Option<FaultHook>,
) -> Result<Gathered> {
    let shards = index.shards();
    let Some(deadline) = deadline else {
        if shards.len() == 1 {
            let r = run_shard(&shards[0], &words, &table, cascade, fault.as_ref())?;
            return Ok(merge(vec![r], cascade.l1_keep, Vec::new()));
        }
        let responses = thread::scope(|s| {
            let handles: Vec<_> = shards
                .iter()
                .map(|shard| s.spawn(|| run_shard(shard, &words, &table, cascade, fault.as_ref())))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("shard worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?;
        return Ok(merge(responses, cascade.l1_keep, Vec::new()));
    };

    let start = Instant::now();
    let (tx, rx) = mpsc::channel();
    for i in 0..shards.len() {
        let (tx, index, words, table, cascade, fault) = (
            tx.clone(),
            Arc::clone(index),
            Arc::clone(&words),
            Arc::clone(&table),
            cascade.clone(),
            fault.clone(),
        );
        thread::spawn(move || {
            let r = run_shard(index.shard(i), &words, &table, &cascade, fault.as_ref());
            // The receiver is gone once the deadline passed; nothing to do.
            let _ = tx.send((i, r));
        });
    }
    drop(tx);
    let mut responses = Vec::new();
    let mut answered = vec![false; shards.len()];
    while responses.len() < shards.len() {
        let left = deadline.saturating_sub(start.elapsed());
        match rx.recv_timeout(left) {
            Ok((i, r)) => {
                answered[i] = true;
                responses.push(r?);
            }
            Err(_) => break,
        }
    }
    let timed_out: Vec<u32> = (0..shards.len())
        .filter(|&i| !answered[i])
        .map(|i| i as u32)
        .collect();
    if !timed_out.is_empty() {
        warn!(
            "{} of {} shards missed the {deadline:?} deadline",
            timed_out.len(),
            shards.len()
        );
    }
    if responses.is_empty() {
        return Err(Error::AllShardsTimedOut(Box::new(Diagnostics {
            partial: true,
            timed_out_shards: timed_out,
            ..Diagnostics::default()
        })));
    }
    Ok(merge(responses, cascade.l1_keep, timed_out))
}
