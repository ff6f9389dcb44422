use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::InteractionSequence;
use crate::error::{Error, Result};

/// User-length bucket by train-visible interaction count:
/// `(0, 5]`, `(5, 20]`, `(20, ∞)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Short,
    Medium,
    Long,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Short, Group::Medium, Group::Long];

    pub fn of(count: usize) -> Self {
        match count {
            0..=5 => Group::Short,
            6..=20 => Group::Medium,
            _ => Group::Long,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Group::Short => "short",
            Group::Medium => "medium",
            Group::Long => "long",
        }
    }
}

/// Which training rows a user contributes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainRows {
    /// One row: everything before the train target.
    #[default]
    Last,
    /// Every prefix of the training portion predicts its next item.
    Prefixes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub max_len: usize,
    pub train_rows: TrainRows,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            max_len: 50,
            train_rows: TrainRows::Last,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Valid,
    Test,
}

/// One prediction example: the (truncated) history before `position`
/// and the item found there.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRow {
    pub user: usize,
    pub input: Vec<usize>,
    pub target: usize,
    /// Index of `target` in the user's full history.
    pub position: usize,
}

pub const SPLIT_FORMAT: &str = "sigma-split/1";

/// Id-mapped leave-one-out split. Item index 0 is padding; `items[0]` is
/// an empty placeholder. Users are indexed from 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub format: String,
    pub options: SplitOptions,
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub histories: Vec<Vec<usize>>,
    pub groups: Vec<Group>,
    pub train: Vec<SplitRow>,
    pub valid: Vec<SplitRow>,
    pub test: Vec<SplitRow>,
}

/// Last valid item is the test target, the one before it the validation
/// target, and the rest is training data. Users with fewer than three
/// interactions are dropped; users with exactly three have no training row.
pub fn split_leave_one_out(seqs: &[InteractionSequence], opts: SplitOptions) -> Result<SplitDataset> {
    if opts.max_len == 0 {
        return Err(Error::Config("max_len must be positive".into()));
    }
    let (kept, dropped): (Vec<_>, Vec<_>) = seqs.iter().partition(|s| s.items.len() >= 3);
    if !dropped.is_empty() {
        log::warn!("dropping {} users with fewer than 3 interactions", dropped.len());
    }
    let vocab: BTreeSet<&str> = kept
        .iter()
        .flat_map(|s| s.items.iter().map(|i| i.item.as_str()))
        .collect();
    let mut items = vec![String::new()];
    items.extend(vocab.iter().map(|s| s.to_string()));
    let lookup: std::collections::HashMap<&str, usize> =
        vocab.iter().enumerate().map(|(i, &v)| (v, i + 1)).collect();

    let mut out = SplitDataset {
        format: SPLIT_FORMAT.to_string(),
        options: opts,
        users: Vec::with_capacity(kept.len()),
        items,
        histories: Vec::with_capacity(kept.len()),
        groups: Vec::with_capacity(kept.len()),
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    let row = |user: usize, hist: &[usize], position: usize| SplitRow {
        user,
        input: hist[position.saturating_sub(opts.max_len)..position].to_vec(),
        target: hist[position],
        position,
    };
    for (u, s) in kept.iter().enumerate() {
        let hist: Vec<usize> = s.items.iter().map(|i| lookup[i.item.as_str()]).collect();
        let n = hist.len();
        out.test.push(row(u, &hist, n - 1));
        out.valid.push(row(u, &hist, n - 2));
        match opts.train_rows {
            TrainRows::Last if n >= 4 => out.train.push(row(u, &hist, n - 3)),
            TrainRows::Last => {}
            TrainRows::Prefixes => out.train.extend((1..n - 2).map(|k| row(u, &hist, k))),
        }
        out.users.push(s.user.clone());
        out.groups.push(Group::of(n - 2));
        out.histories.push(hist);
    }
    Ok(out)
}

impl SplitDataset {
    pub fn num_items(&self) -> usize {
        self.items.len() - 1
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn rows(&self, part: Part) -> &[SplitRow] {
        match part {
            Part::Train => &self.train,
            Part::Valid => &self.valid,
            Part::Test => &self.test,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let s: SplitDataset = serde_json::from_reader(std::io::BufReader::new(f))?;
        if s.format != SPLIT_FORMAT {
            return Err(Error::Contract(format!("unknown split format {:?}", s.format)));
        }
        s.check_integrity()?;
        Ok(s)
    }

    /// Every row's input is the history immediately before its target, and
    /// per user the train targets precede the validation target, which
    /// precedes the test target.
    pub fn check_integrity(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Contract(msg));
        let n_users = self.users.len();
        if self.histories.len() != n_users || self.groups.len() != n_users {
            return fail("per-user tables disagree in length".into());
        }
        if self.valid.len() != n_users || self.test.len() != n_users {
            return fail("every user needs one validation and one test row".into());
        }
        for (part, rows) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            for r in rows.iter() {
                let Some(hist) = self.histories.get(r.user) else {
                    return fail(format!("{part} row for unknown user {}", r.user));
                };
                let n = hist.len();
                let ok_pos = match part {
                    "test" => r.position + 1 == n,
                    "valid" => r.position + 2 == n,
                    _ => r.position + 3 <= n,
                };
                if !ok_pos || r.input.is_empty() || r.input.len() > self.options.max_len {
                    return fail(format!("{part} row of user {} misplaced", r.user));
                }
                if hist[r.position] != r.target || hist[r.position - r.input.len()..r.position] != r.input[..] {
                    return fail(format!("{part} row of user {} does not match history", r.user));
                }
                if r.target == 0 || r.target >= self.items.len() {
                    return fail(format!("{part} target {} out of catalog", r.target));
                }
            }
        }
        Ok(())
    }
}
