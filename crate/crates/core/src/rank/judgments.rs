//! Pairwise human judgments to graded (list-wise) labels.
//!
//! Per query, Bradley–Terry strengths are fitted by maximum likelihood with
//! the minorize-maximize iteration, then bucketed into quintile grades 0–4.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pseudo-tie weight added to every compared pair. Keeps the MLE finite
/// when one document never loses.
pub const BT_PRIOR_TIES: f64 = 0.01;
pub const GRADES: u8 = 5;
const MAX_ITERS: usize = 200_000;
const TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseJudgment {
    pub query_id: u64,
    pub winner: u64,
    pub loser: u64,
    #[serde(default)]
    pub tie: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ListwiseLabel {
    pub query_id: u64,
    pub doc_id: u64,
    pub grade: u8,
}

/// Fitted strengths for one query: `ln p` per document, with the strongest
/// document of each connected component at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryStrengths {
    pub docs: Vec<u64>,
    pub log_strength: Vec<f64>,
    pub components: usize,
}

/// Reads JSONL `{query_id, winner, loser, tie}` lines; blank lines skipped.
pub fn read_judgments(reader: impl BufRead) -> Result<Vec<PairwiseJudgment>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let j: PairwiseJudgment = serde_json::from_str(&line).map_err(|e| Error::Load {
            record: i as u64,
            reason: e.to_string(),
        })?;
        if j.winner == j.loser {
            return Err(Error::Load {
                record: i as u64,
                reason: "winner equals loser".into(),
            });
        }
        out.push(j);
    }
    Ok(out)
}

/// Win matrix (ties split in half) including the pseudo-tie prior.
fn win_matrix(docs: &[u64], judgments: &[&PairwiseJudgment]) -> Vec<Vec<f64>> {
    let m = docs.len();
    let idx = |d: u64| docs.binary_search(&d).unwrap();
    let mut w = vec![vec![0.0; m]; m];
    for j in judgments {
        let (a, b) = (idx(j.winner), idx(j.loser));
        if j.tie {
            w[a][b] += 0.5;
            w[b][a] += 0.5;
        } else {
            w[a][b] += 1.0;
        }
    }
    for a in 0..m {
        for b in a + 1..m {
            if w[a][b] + w[b][a] > 0.0 {
                w[a][b] += BT_PRIOR_TIES / 2.0;
                w[b][a] += BT_PRIOR_TIES / 2.0;
            }
        }
    }
    w
}

fn components(w: &[Vec<f64>]) -> Vec<usize> {
    let m = w.len();
    let mut comp = vec![usize::MAX; m];
    let mut next = 0;
    for start in 0..m {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = next;
        while let Some(a) = stack.pop() {
            for b in 0..m {
                if comp[b] == usize::MAX && w[a][b] + w[b][a] > 0.0 {
                    comp[b] = next;
                    stack.push(b);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Bradley–Terry fit for one query's judgments.
pub fn fit_strengths(judgments: &[&PairwiseJudgment]) -> QueryStrengths {
    let docs: Vec<u64> = judgments
        .iter()
        .flat_map(|j| [j.winner, j.loser])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let m = docs.len();
    let w = win_matrix(&docs, judgments);
    let comp = components(&w);
    let n_comp = comp.iter().max().map_or(0, |c| c + 1);

    let wins: Vec<f64> = (0..m).map(|a| w[a].iter().sum()).collect();
    let mut p = vec![1.0f64; m];
    for _ in 0..MAX_ITERS {
        let mut next = vec![0.0; m];
        for a in 0..m {
            let denom: f64 = (0..m)
                .filter(|&b| b != a)
                .map(|b| (w[a][b] + w[b][a]) / (p[a] + p[b]))
                .sum();
            next[a] = if denom > 0.0 { wins[a] / denom } else { 1.0 };
        }
        // Rescale each component so its strongest member is 1.
        for c in 0..n_comp {
            let max = (0..m)
                .filter(|&a| comp[a] == c)
                .map(|a| next[a])
                .fold(0.0, f64::max);
            if max > 0.0 {
                (0..m)
                    .filter(|&a| comp[a] == c)
                    .for_each(|a| next[a] /= max);
            }
        }
        let delta = p
            .iter()
            .zip(&next)
            .map(|(a, b)| (a.ln() - b.ln()).abs())
            .fold(0.0, f64::max);
        p = next;
        if delta < TOLERANCE {
            break;
        }
    }
    QueryStrengths {
        docs,
        log_strength: p.iter().map(|v| v.ln()).collect(),
        components: n_comp,
    }
}

/// Quintile grade by position in ascending strength order; documents with
/// equal strength share the grade of the first of their run.
pub fn quintile_grades(strengths: &[f64]) -> Vec<u8> {
    let m = strengths.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| strengths[a].total_cmp(&strengths[b]).then(a.cmp(&b)));
    let mut grades = vec![0u8; m];
    let mut run_start = 0;
    for (r, &i) in order.iter().enumerate() {
        if r > 0 && (strengths[i] - strengths[order[r - 1]]).abs() > 1e-9 {
            run_start = r;
        }
        grades[i] = ((GRADES as usize * run_start) / m) as u8;
    }
    grades
}

/// Fits strengths per query and buckets them into grades. Output is sorted by
/// (query, doc) and independent of the judgment order.
pub fn pairwise_to_listwise(judgments: &[PairwiseJudgment]) -> Result<Vec<ListwiseLabel>> {
    let mut by_query: BTreeMap<u64, Vec<&PairwiseJudgment>> = BTreeMap::new();
    for j in judgments {
        if j.winner == j.loser {
            return Err(Error::config(format!(
                "judgment for query {} compares a doc with itself",
                j.query_id
            )));
        }
        by_query.entry(j.query_id).or_default().push(j);
    }
    let mut labels = Vec::new();
    for (query_id, js) in by_query {
        let fit = fit_strengths(&js);
        if fit.components > 1 {
            warn!(
                "query {query_id}: comparison graph has {} components; strengths fit per component",
                fit.components
            );
        }
        let grades = quintile_grades(&fit.log_strength);
        labels.extend(
            fit.docs
                .iter()
                .zip(grades)
                .map(|(&doc_id, grade)| ListwiseLabel {
                    query_id,
                    doc_id,
                    grade,
                }),
        );
    }
    Ok(labels)
}
