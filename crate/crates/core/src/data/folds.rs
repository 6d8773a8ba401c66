use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train/dev/test ids for one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles `ids` with `seed`, cuts them into `n_folds` contiguous folds
/// whose sizes differ by at most one, and for fold k tests on fold k, uses
/// fold (k+1) mod n for development and trains on the rest.
pub fn make_folds(ids: &[String], n_folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if n_folds < 3 {
        return Err(Error::Config("n_folds must be at least 3".into()));
    }
    if ids.len() < n_folds {
        return Err(Error::TooFewIds {
            ids: ids.len(),
            folds: n_folds,
        });
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = shuffled.len() / n_folds;
    let extra = shuffled.len() % n_folds;
    let mut folds = Vec::with_capacity(n_folds);
    let mut start = 0;
    for k in 0..n_folds {
        let size = base + usize::from(k < extra);
        folds.push(shuffled[start..start + size].to_vec());
        start += size;
    }

    Ok((0..n_folds)
        .map(|k| {
            let dev_fold = (k + 1) % n_folds;
            let train = folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k && *j != dev_fold)
                .flat_map(|(_, f)| f.iter().cloned())
                .collect();
            FoldSplit {
                fold: k,
                train,
                dev: folds[dev_fold].clone(),
                test: folds[k].clone(),
            }
        })
        .collect())
}
