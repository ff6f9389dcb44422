//! Interaction logs: ingest, filtering, leave-one-out splitting and batching.

mod batch;
mod split;
pub mod synth;

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{batch_iter, Batch};
pub use split::{split_leave_one_out, Group, Part, SplitDataset, SplitOptions, SplitRow, TrainRows, SPLIT_FORMAT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub item: String,
    pub timestamp: i64,
    pub rating: Option<f64>,
}

/// One user's history, oldest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionSequence {
    pub user: String,
    pub items: Vec<Interaction>,
}

impl InteractionSequence {
    /// Order by `(timestamp, rating)`; a missing rating sorts first.
    pub fn sort(&mut self) {
        let key = |r: Option<f64>| r.unwrap_or(f64::NEG_INFINITY);
        self.items.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| key(a.rating).total_cmp(&key(b.rating)))
        });
    }
}

pub fn ingest(path: &Path) -> Result<Vec<InteractionSequence>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tsv(file, &path.display().to_string())
}

/// Parse a tab-separated log with a header naming `user_id`, `item_id`,
/// `timestamp` and optionally `rating`. Users come back sorted by id, each
/// history sorted by `(timestamp, rating)`.
pub fn read_tsv<R: Read>(reader: R, label: &str) -> Result<Vec<InteractionSequence>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: label.into(),
        line,
        msg,
    };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Ok(Vec::new());
    }
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(user_col), Some(item_col), Some(ts_col)) =
        (col("user_id"), col("item_id"), col("timestamp"))
    else {
        return Err(parse_err(1, format!("header must name user_id, item_id, timestamp; got {headers:?}")));
    };
    let rating_col = col("rating");

    let mut users: BTreeMap<String, Vec<Interaction>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let field = |i: usize, name: &str| {
            rec.get(i)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| parse_err(line, format!("missing {name}")))
        };
        let user = field(user_col, "user_id")?.to_string();
        let item = field(item_col, "item_id")?.to_string();
        let ts = field(ts_col, "timestamp")?;
        let timestamp = ts
            .parse::<i64>()
            .map_err(|_| parse_err(line, format!("timestamp {ts:?} is not an integer")))?;
        let rating = match rating_col.and_then(|i| rec.get(i)).map(str::trim) {
            None | Some("") => None,
            Some(r) => Some(
                r.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("rating {r:?} is not a number")))?,
            ),
        };
        users.entry(user).or_default().push(Interaction {
            item,
            timestamp,
            rating,
        });
    }
    Ok(users
        .into_iter()
        .map(|(user, items)| {
            let mut s = InteractionSequence { user, items };
            s.sort();
            s
        })
        .collect())
}

/// Write sequences in the format [`read_tsv`] accepts.
pub fn write_tsv<W: Write>(seqs: &[InteractionSequence], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
    let csv_err = |e: csv::Error| Error::Contract(format!("tsv write failed: {e}"));
    w.write_record(["user_id", "item_id", "timestamp", "rating"])
        .map_err(csv_err)?;
    for s in seqs {
        for it in &s.items {
            let rating = it.rating.map(|r| r.to_string()).unwrap_or_default();
            w.write_record([s.user.as_str(), it.item.as_str(), &it.timestamp.to_string(), &rating])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<tsv output>", e))?;
    Ok(())
}

/// Keep the most recent `cap` interactions per user, then repeatedly drop
/// items and users with fewer than `min_count` interactions until nothing
/// changes. The output is a fixpoint of this function.
pub fn filter_and_bound(
    mut seqs: Vec<InteractionSequence>,
    min_count: usize,
    cap: Option<usize>,
) -> Vec<InteractionSequence> {
    if let Some(cap) = cap {
        for s in &mut seqs {
            let excess = s.items.len().saturating_sub(cap);
            s.items.drain(..excess);
        }
    }
    loop {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in &seqs {
            for it in &s.items {
                *counts.entry(it.item.as_str()).or_default() += 1;
            }
        }
        let rare: std::collections::HashSet<String> = counts
            .into_iter()
            .filter(|&(_, c)| c < min_count)
            .map(|(k, _)| k.to_string())
            .collect();
        let before = seqs.len();
        for s in &mut seqs {
            s.items.retain(|it| !rare.contains(&it.item));
        }
        seqs.retain(|s| s.items.len() >= min_count && !s.items.is_empty());
        if rare.is_empty() && seqs.len() == before {
            return seqs;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub avg_len: f64,
    pub sparsity: f64,
}

impl DatasetStats {
    pub fn of(seqs: &[InteractionSequence]) -> Self {
        let users = seqs.len();
        let items = seqs
            .iter()
            .flat_map(|s| s.items.iter().map(|i| i.item.as_str()))
            .collect::<std::collections::HashSet<_>>()
            .len();
        let interactions: usize = seqs.iter().map(|s| s.items.len()).sum();
        let avg_len = if users == 0 { 0.0 } else { interactions as f64 / users as f64 };
        let cells = (users * items) as f64;
        let sparsity = if cells == 0.0 { 0.0 } else { 1.0 - interactions as f64 / cells };
        DatasetStats {
            users,
            items,
            interactions,
            avg_len,
            sparsity,
        }
    }

    /// Two-line table: header and values with thousands separators.
    pub fn table(&self) -> String {
        format!(
            "{:>10} {:>10} {:>14} {:>9} {:>8}\n{:>10} {:>10} {:>14} {:>8.2}% {:>8.2}",
            "#users",
            "#items",
            "#interactions",
            "sparsity",
            "avg.len",
            thousands(self.users),
            thousands(self.items),
            thousands(self.interactions),
            self.sparsity * 100.0,
            self.avg_len
        )
    }
}

fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}
