use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Subset `rotation % denominator` of a contiguous partition of a
/// seed-shuffled permutation of `0..n_items`. Subsets are disjoint, cover every
/// item and differ in size by at most one.
pub fn rotate_subset(
    n_items: usize,
    denominator: usize,
    rotation: u64,
    seed: u64,
) -> Result<Vec<usize>> {
    if denominator < 1 {
        return Err(Error::InvalidArgument("denominator must be >= 1".into()));
    }
    if n_items < denominator {
        return Err(Error::InvalidArgument(format!(
            "{n_items} items cannot be split into {denominator} subsets"
        )));
    }
    let mut order: Vec<usize> = (0..n_items).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let s = (rotation % denominator as u64) as usize;
    let (base, extra) = (n_items / denominator, n_items % denominator);
    let start = s * base + s.min(extra);
    let len = base + usize::from(s < extra);
    let mut subset = order[start..start + len].to_vec();
    subset.sort_unstable();
    Ok(subset)
}
