//! Full-catalog ranking metrics, overall and per user-length group.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Group, Part, SplitDataset, SplitRow};
use crate::error::{Error, Result};
use crate::model::SigmaModel;
use crate::tensor::Scalar;

/// 1-based rank of `target` among `scores`. Ties go to the lower index.
pub fn rank_target<T: PartialOrd>(scores: &[T], target: usize) -> usize {
    let t = &scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, s)| s > t || (s == t && j < target))
        .count()
}

/// Rank of the held-out item for one user; rank 0 means it was not ranked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub user: usize,
    pub rank: usize,
}

fn hit(rank: usize, k: usize) -> bool {
    rank >= 1 && rank <= k
}

fn mean(ranks: &[usize], f: impl Fn(usize) -> f64) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| f(r)).sum::<f64>() / ranks.len() as f64
}

pub fn hr_at_k(ranks: &[usize], k: usize) -> f64 {
    mean(ranks, |r| if hit(r, k) { 1.0 } else { 0.0 })
}

pub fn ndcg_at_k(ranks: &[usize], k: usize) -> f64 {
    mean(ranks, |r| if hit(r, k) { 1.0 / ((r + 1) as f64).log2() } else { 0.0 })
}

pub fn mrr_at_k(ranks: &[usize], k: usize) -> f64 {
    mean(ranks, |r| if hit(r, k) { 1.0 / r as f64 } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Hr,
    Ndcg,
    Mrr,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Hr, Metric::Ndcg, Metric::Mrr];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Hr => "hr",
            Metric::Ndcg => "ndcg",
            Metric::Mrr => "mrr",
        }
    }

    pub fn compute(self, ranks: &[usize], k: usize) -> f64 {
        match self {
            Metric::Hr => hr_at_k(ranks, k),
            Metric::Ndcg => ndcg_at_k(ranks, k),
            Metric::Mrr => mrr_at_k(ranks, k),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: Metric,
    pub cutoff: usize,
    /// `overall`, `short`, `medium` or `long`.
    pub group: String,
    pub value: f64,
    pub n_users: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cutoffs: Vec<usize>,
    pub rows: Vec<MetricRow>,
}

pub const OVERALL: &str = "overall";

impl EvalReport {
    pub fn get(&self, metric: Metric, cutoff: usize, group: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.cutoff == cutoff && r.group == group)
            .map(|r| r.value)
    }

    pub fn users(&self, group: &str) -> usize {
        self.rows
            .iter()
            .find(|r| r.group == group)
            .map_or(0, |r| r.n_users)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Contract(format!("csv write failed: {e}"));
        w.write_record(["metric", "cutoff", "group", "value", "n_users"])
            .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.metric.name(),
                &r.cutoff.to_string(),
                &r.group,
                &r.value.to_string(),
                &r.n_users.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Metrics over all users and per group. `groups` is indexed by user.
pub fn grouped_report(preds: &[RankedPrediction], groups: &[Group], cutoffs: &[usize]) -> EvalReport {
    let all: Vec<usize> = preds.iter().map(|p| p.rank).collect();
    let mut sets = vec![(OVERALL.to_string(), all)];
    for g in Group::ALL {
        let ranks = preds
            .iter()
            .filter(|p| groups.get(p.user) == Some(&g))
            .map(|p| p.rank)
            .collect();
        sets.push((g.label().to_string(), ranks));
    }
    let mut rows = Vec::new();
    for &k in cutoffs {
        for m in Metric::ALL {
            for (name, ranks) in &sets {
                rows.push(MetricRow {
                    metric: m,
                    cutoff: k,
                    group: name.clone(),
                    value: m.compute(ranks, k),
                    n_users: ranks.len(),
                });
            }
        }
    }
    EvalReport {
        cutoffs: cutoffs.to_vec(),
        rows,
    }
}

/// Rank every row's target with the model. Batches are scored in parallel
/// on independent inference tapes; the result keeps row order.
pub fn rank_rows<T: Scalar>(
    model: &SigmaModel<T>,
    rows: &[SplitRow],
    width: usize,
    batch_size: usize,
) -> Result<Vec<RankedPrediction>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let k = model.cfg.num_items;
    let chunks: Vec<&[SplitRow]> = rows.chunks(batch_size).collect();
    let ranked = chunks
        .par_iter()
        .map(|chunk| {
            let refs: Vec<&SplitRow> = chunk.iter().collect();
            let batch = Batch::from_rows(&refs, width)?;
            let scores = model.score(&batch)?;
            Ok(chunk
                .iter()
                .enumerate()
                .map(|(i, r)| RankedPrediction {
                    user: r.user,
                    rank: if (1..=k).contains(&r.target) {
                        rank_target(&scores[i * k..(i + 1) * k], r.target - 1)
                    } else {
                        0
                    },
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ranked.into_iter().flatten().collect())
}

pub fn evaluate<T: Scalar>(
    model: &SigmaModel<T>,
    split: &SplitDataset,
    part: Part,
    batch_size: usize,
    cutoffs: &[usize],
) -> Result<EvalReport> {
    let preds = rank_rows(model, split.rows(part), split.options.max_len, batch_size)?;
    Ok(grouped_report(&preds, &split.groups, cutoffs))
}

/// Ranks every target by item frequency in the training portion (all
/// interactions before each user's validation target).
pub fn popularity_ranks(split: &SplitDataset, part: Part) -> Vec<RankedPrediction> {
    let mut counts = vec![0u64; split.num_items()];
    for h in &split.histories {
        for &i in &h[..h.len() - 2] {
            counts[i - 1] += 1;
        }
    }
    split
        .rows(part)
        .iter()
        .map(|r| RankedPrediction {
            user: r.user,
            rank: rank_target(&counts, r.target - 1),
        })
        .collect()
}
