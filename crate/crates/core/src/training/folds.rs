use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// A seeded partition of `0..n` into test folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub fold_count: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Shuffles `0..n` with `seed` and cuts it into `fold_count` contiguous
/// chunks whose sizes differ by at most one.
pub fn kfold_split(n: usize, fold_count: usize, seed: u64) -> Result<FoldSpec> {
    if fold_count < 2 || n < fold_count {
        return Err(invalid("kfold_split", format!("need n >= fold_count >= 2, got n = {n}, fold_count = {fold_count}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / fold_count;
    let extra = n % fold_count;
    let mut folds = Vec::with_capacity(fold_count);
    let mut start = 0;
    for f in 0..fold_count {
        let len = base + usize::from(f < extra);
        let test = order[start..start + len].to_vec();
        let train = order[..start].iter().chain(&order[start + len..]).copied().collect();
        folds.push(Fold { train, test });
        start += len;
    }
    Ok(FoldSpec {
        fold_count,
        seed,
        folds,
    })
}
