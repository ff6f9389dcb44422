//! Seeded synthetic interaction logs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Interaction, InteractionSequence};

fn seq(user: usize, items: impl IntoIterator<Item = usize>) -> InteractionSequence {
    InteractionSequence {
        user: format!("u{user:05}"),
        items: items
            .into_iter()
            .enumerate()
            .map(|(t, i)| Interaction {
                item: format!("i{i:05}"),
                timestamp: t as i64,
                rating: None,
            })
            .collect(),
    }
}

/// Every user walks the catalog `1..=items` in order from a random start,
/// wrapping around.
pub fn cyclic(users: usize, items: usize, len: usize, seed: u64) -> Vec<InteractionSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..users)
        .map(|u| {
            let start = rng.gen_range(0..items);
            seq(u, (0..len).map(|t| (start + t) % items + 1))
        })
        .collect()
}

/// Users step through the catalog with a private stride, so the next item
/// follows from the last two. `short_frac` of the users get 4 or 5
/// interactions, the rest `long_len.0..=long_len.1`.
pub fn strided(
    users: usize,
    items: usize,
    strides: &[usize],
    short_frac: f64,
    long_len: (usize, usize),
    seed: u64,
) -> Vec<InteractionSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..users)
        .map(|u| {
            let len = if (u as f64) < short_frac * users as f64 {
                rng.gen_range(4..=5)
            } else {
                rng.gen_range(long_len.0..=long_len.1)
            };
            let stride = *strides.choose(&mut rng).expect("strides is non-empty");
            let start = rng.gen_range(0..items);
            seq(u, (0..len).map(|t| (start + t * stride) % items + 1))
        })
        .collect()
}

/// Irregular logs for pipeline property tests: tied and shuffled
/// timestamps, optional ratings, no repeated item within one user.
pub fn random_log(seed: u64) -> Vec<InteractionSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = rng.gen_range(1..40);
    let catalog = rng.gen_range(3..40);
    let with_ratings = rng.gen_bool(0.5);
    (0..users)
        .map(|u| {
            let len = rng.gen_range(1..=catalog.min(30));
            let mut picks: Vec<usize> = (1..=catalog).collect();
            picks.shuffle(&mut rng);
            let items: Vec<Interaction> = picks[..len]
                .iter()
                .map(|&i| Interaction {
                    item: format!("i{i}"),
                    timestamp: rng.gen_range(0..len as i64 * 2),
                    rating: with_ratings.then(|| f64::from(rng.gen_range(1..=5u8))),
                })
                .collect();
            let mut s = InteractionSequence {
                user: format!("user{u}"),
                items,
            };
            s.sort();
            s
        })
        .collect()
}
