//! Partial flip of left-padded rows.
//!
//! A row of width `N` holds its `len` real items in the last `len` columns.
//! With `n = max(len - r, 0)`, the first `n` real items are reversed and the
//! last `r` stay in place. Padding columns are never moved.

/// Source column for every column of one row: `out[t] = row[src[t]]`.
pub fn flip_indices(width: usize, true_len: usize, keep: usize) -> Vec<usize> {
    let len = true_len.min(width);
    let start = width - len;
    let n = len.saturating_sub(keep);
    let mut src: Vec<usize> = (0..width).collect();
    for i in 0..n {
        src[start + i] = start + n - 1 - i;
    }
    src
}

/// Concatenated [`flip_indices`] for a batch, as consumed by `permute_time`.
pub fn batch_flip_indices(width: usize, lens: &[usize], keep: usize) -> Vec<usize> {
    lens.iter()
        .flat_map(|&len| flip_indices(width, len, keep))
        .collect()
}

pub fn partial_flip<X: Clone>(row: &[X], true_len: usize, keep: usize) -> Vec<X> {
    flip_indices(row.len(), true_len, keep)
        .into_iter()
        .map(|i| row[i].clone())
        .collect()
}
