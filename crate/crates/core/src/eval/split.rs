//! Train/validation/test partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Indices into the original record list, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    pub fn parts(&self) -> [&[usize]; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// Splits `labels.len()` records with the given (train, val, test) ratios.
///
/// Validation and test sizes are `round(ratio · n)`; train takes the rest.
/// With `stratify`, each part's per-class counts are allocated in
/// proportion to the class sizes by largest remainder. Every part must end
/// up holding both classes.
pub fn split_dataset(labels: &[bool], ratios: [f64; 3], seed: u64, stratify: bool) -> Result<Split> {
    let n = labels.len();
    if n < 5 {
        return Err(Error::data(format!("splitting needs at least 5 records, got {n}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 || ratios.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::config(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    let n_val = (ratios[1] * n as f64).round() as usize;
    let n_test = (ratios[2] * n as f64).round() as usize;
    if n_val == 0 || n_test == 0 || n_val + n_test >= n {
        return Err(Error::Stratification(format!(
            "ratios {ratios:?} leave an empty part at n = {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    if stratify {
        let mut classes: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, &l) in labels.iter().enumerate() {
            classes[l as usize].push(i);
        }
        let sizes = [classes[0].len(), classes[1].len()];
        let val_q = apportion(n_val, sizes, [0, 0]);
        let test_q = apportion(n_test, sizes, val_q);
        for (c, members) in classes.iter_mut().enumerate() {
            members.shuffle(&mut rng);
            let (v, rest) = members.split_at(val_q[c]);
            let (t, tr) = rest.split_at(test_q[c]);
            split.val.extend_from_slice(v);
            split.test.extend_from_slice(t);
            split.train.extend_from_slice(tr);
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        split.val = all[..n_val].to_vec();
        split.test = all[n_val..n_val + n_test].to_vec();
        split.train = all[n_val + n_test..].to_vec();
    }
    for part in [&mut split.train, &mut split.val, &mut split.test] {
        part.sort_unstable();
    }
    for (name, part) in ["train", "validation", "test"].iter().zip(split.parts()) {
        let pos = part.iter().filter(|&&i| labels[i]).count();
        if pos == 0 || pos == part.len() {
            return Err(Error::Stratification(format!(
                "{name} part of {} records holds a single class (n = {n})",
                part.len()
            )));
        }
    }
    Ok(split)
}

/// Distributes `k` slots over two classes proportionally to `sizes`, never
/// exceeding what is left after `taken`.
fn apportion(k: usize, sizes: [usize; 2], taken: [usize; 2]) -> [usize; 2] {
    let n = (sizes[0] + sizes[1]) as f64;
    let exact = [k as f64 * sizes[0] as f64 / n, k as f64 * sizes[1] as f64 / n];
    let mut q = [exact[0].floor() as usize, exact[1].floor() as usize];
    let room = |q: [usize; 2], c: usize| q[c] + taken[c] < sizes[c];
    while q[0] + q[1] < k {
        let rem = [exact[0] - q[0] as f64, exact[1] - q[1] as f64];
        let first = if rem[1] > rem[0] { 1 } else { 0 };
        let c = if room(q, first) { first } else { 1 - first };
        q[c] += 1;
    }
    for c in 0..2 {
        q[c] = q[c].min(sizes[c] - taken[c]);
    }
    q
}
