use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SplitRow;
use crate::error::{Error, Result};

/// Left-padded id matrix `[B×width]`; the most recent input item sits in the
/// last column of every row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub width: usize,
    pub ids: Vec<usize>,
    pub lens: Vec<usize>,
    pub targets: Vec<usize>,
    pub users: Vec<usize>,
}

impl Batch {
    pub fn from_rows(rows: &[&SplitRow], width: usize) -> Result<Self> {
        if width == 0 || rows.is_empty() {
            return Err(Error::Contract("a batch needs rows and a positive width".into()));
        }
        let mut b = Batch {
            width,
            ids: vec![0; rows.len() * width],
            lens: Vec::with_capacity(rows.len()),
            targets: Vec::with_capacity(rows.len()),
            users: Vec::with_capacity(rows.len()),
        };
        for (i, r) in rows.iter().enumerate() {
            if r.input.is_empty() {
                return Err(Error::Contract(format!("user {} has an empty input row", r.user)));
            }
            let keep = &r.input[r.input.len().saturating_sub(width)..];
            b.ids[(i + 1) * width - keep.len()..(i + 1) * width].copy_from_slice(keep);
            b.lens.push(keep.len());
            b.targets.push(r.target);
            b.users.push(r.user);
        }
        Ok(b)
    }

    pub fn size(&self) -> usize {
        self.lens.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.ids[i * self.width..(i + 1) * self.width]
    }
}

/// Batches of `batch_size` rows; the last one may be smaller. With a seed the
/// row order is a seeded shuffle, otherwise the stored order.
pub fn batch_iter(
    rows: &[SplitRow],
    width: usize,
    batch_size: usize,
    shuffle: Option<u64>,
) -> Result<impl Iterator<Item = Batch> + '_> {
    if batch_size == 0 || width == 0 {
        return Err(Error::Config("batch size and width must be positive".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.input.is_empty()) {
        return Err(Error::Contract(format!("user {} has an empty input row", r.user)));
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    if let Some(seed) = shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(chunks.into_iter().map(move |idx| {
        let picked: Vec<&SplitRow> = idx.iter().map(|&i| &rows[i]).collect();
        Batch::from_rows(&picked, width).expect("rows validated above")
    }))
}
