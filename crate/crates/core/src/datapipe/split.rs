use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numerics::seeded;

/// Train / validation / test proportions.
pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

/// Shuffles whole items with `seed` and partitions them by `ratios`.
/// Validation and test each receive at least one item when their ratio is
/// positive; training takes the rest.
pub fn split_dataset<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if ratios.iter().any(|r| *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let parts = ratios.iter().filter(|r| **r > 0.0).count();
    if items.len() < parts {
        return Err(Error::Config(format!(
            "{} samples cannot fill {parts} partitions",
            items.len()
        )));
    }
    let n = items.len();
    let size = |r: f64| {
        if r > 0.0 {
            ((n as f64 * r + 1e-9).floor() as usize).max(1)
        } else {
            0
        }
    };
    let (n_val, n_test) = (size(ratios[1]), size(ratios[2]));
    let n_train = n - n_val - n_test;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn ten_splits_eight_one_one() {
        let items: Vec<u32> = (0..10).collect();
        let (a, b, c) = split_dataset(&items, DEFAULT_RATIOS, 5).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let all: BTreeSet<u32> = a.iter().chain(&b).chain(&c).copied().collect();
        assert_eq!(all.len(), 10);
        assert_eq!(split_dataset(&items, DEFAULT_RATIOS, 5).unwrap(), (a, b, c));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(split_dataset(&[1, 2], DEFAULT_RATIOS, 0).is_err());
        assert!(split_dataset(&[1, 2, 3], [0.5, 0.2, 0.2], 0).is_err());
    }

    #[test]
    fn hundred_items() {
        let items: Vec<u32> = (0..100).collect();
        let (a, b, c) = split_dataset(&items, DEFAULT_RATIOS, 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (80, 10, 10));
    }
}
