use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FOLD_COUNT: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

/// Subject-wise cross-validation with five folds.
///
/// Sorted subjects are cut into five consecutive groups (sizes differ by at
/// most one). Fold `f` tests on group `f`, validates on the first subject of
/// group `f+1` (cyclically) and trains on everything else.
pub fn loocv_splits(subject_ids: &[u32]) -> Result<Vec<Fold>> {
    let mut ids = subject_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < FOLD_COUNT {
        return Err(Error::invalid(format!(
            "cross-validation needs at least {FOLD_COUNT} subjects, got {}",
            ids.len()
        )));
    }
    let (base, extra) = (ids.len() / FOLD_COUNT, ids.len() % FOLD_COUNT);
    let mut groups = Vec::with_capacity(FOLD_COUNT);
    let mut start = 0;
    for g in 0..FOLD_COUNT {
        let size = base + usize::from(g < extra);
        groups.push(ids[start..start + size].to_vec());
        start += size;
    }
    Ok((0..FOLD_COUNT)
        .map(|f| {
            let test = groups[f].clone();
            let val = vec![groups[(f + 1) % FOLD_COUNT][0]];
            let train = ids
                .iter()
                .copied()
                .filter(|s| !test.contains(s) && !val.contains(s))
                .collect();
            Fold {
                index: f,
                train,
                val,
                test,
            }
        })
        .collect())
}
