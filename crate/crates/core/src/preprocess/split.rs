use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Purpose tag for split sampling streams.
const SPLIT_STREAM: u64 = 0x5350_4c49;

/// Train/test partition of a sample list, per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fraction: f64,
    pub seed: u64,
    /// `train[k]` holds ascending sample indices of class `k + 1`.
    pub train: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

impl SplitPlan {
    pub fn train_indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.train.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    pub fn test_indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.test.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }
}

/// Training samples per class.
///
/// The overall training total is `N − ceil((1 − f)·N)`; it is shared out in
/// proportion to class size by largest remainder (ties to the lower class
/// id), and every class keeps at least one training sample.
pub fn train_counts(sizes: &[usize], fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {fraction} outside (0, 1)"
        )));
    }
    if let Some(k) = sizes.iter().position(|&n| n == 0) {
        return Err(Error::Validation(format!("class {} has no samples", k + 1)));
    }
    let total: usize = sizes.iter().sum();
    let test = (1.0 - fraction) * total as f64;
    let test = if (test - test.round()).abs() < 1e-9 {
        test.round()
    } else {
        test.ceil()
    };
    let n_train = total - test as usize;

    let (n, t) = (total as u128, n_train as u128);
    let mut counts: Vec<usize> = sizes
        .iter()
        .map(|&s| (t * s as u128 / n) as usize)
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // stable sort keeps lower class ids first among equal remainders
    order.sort_by_key(|&k| std::cmp::Reverse(t * sizes[k] as u128 % n));
    let leftover = n_train - counts.iter().sum::<usize>();
    for &k in order.iter().take(leftover) {
        counts[k] += 1;
    }
    for c in &mut counts {
        *c = (*c).max(1);
    }
    Ok(counts)
}

/// Seeded stratified split of samples labeled `1..=classes`. Each class is
/// shuffled with its own stream derived from `seed`; the first
/// [`train_counts`] samples go to training.
pub fn stratified_split(
    labels: &[u16],
    classes: usize,
    fraction: f64,
    seed: u64,
) -> Result<SplitPlan> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &id) in labels.iter().enumerate() {
        if id == 0 || id as usize > classes {
            return Err(Error::Validation(format!(
                "sample {i} has label {id} outside 1..={classes}"
            )));
        }
        members[id as usize - 1].push(i);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let counts = train_counts(&sizes, fraction)?;
    let root = Rng::new(seed);
    let mut train = Vec::with_capacity(classes);
    let mut test = Vec::with_capacity(classes);
    for (k, mut idx) in members.into_iter().enumerate() {
        root.derive(SPLIT_STREAM, k as u64).shuffle(&mut idx);
        let mut tr = idx[..counts[k]].to_vec();
        let mut te = idx[counts[k]..].to_vec();
        tr.sort_unstable();
        te.sort_unstable();
        train.push(tr);
        test.push(te);
    }
    Ok(SplitPlan {
        fraction,
        seed,
        train,
        test,
    })
}
