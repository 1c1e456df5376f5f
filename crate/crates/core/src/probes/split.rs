use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed::rng_for;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            validation: 0.15,
            test: 0.15,
        }
    }
}

/// Disjoint index sets covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub seed: u64,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl DataSplit {
    /// Shuffles `0..n` with a seed-derived stream. Validation and test sizes
    /// are `round(n * fraction)` (at least one each); train takes the rest.
    pub fn new(n: usize, fractions: SplitFractions, seed: u64) -> Result<Self> {
        let SplitFractions { train, validation, test } = fractions;
        if [train, validation, test].iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Validation("split fractions must each lie in (0, 1)".into()));
        }
        if ((train + validation + test) - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "split fractions sum to {}, expected 1",
                train + validation + test
            )));
        }
        let n_val = ((n as f64 * validation).round() as usize).max(1);
        let n_test = ((n as f64 * test).round() as usize).max(1);
        if n < n_val + n_test + 2 {
            return Err(Error::Validation(format!(
                "{n} labeled entities are too few for a train/validation/test split"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(seed, "split", ""));
        let sorted = |mut v: Vec<usize>| {
            v.sort_unstable();
            v
        };
        let test_idx = sorted(order[..n_test].to_vec());
        let val_idx = sorted(order[n_test..n_test + n_val].to_vec());
        let train_idx = sorted(order[n_test + n_val..].to_vec());
        Ok(DataSplit {
            seed,
            train: train_idx,
            validation: val_idx,
            test: test_idx,
        })
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Picks `items[i]` for each index.
pub(crate) fn gather<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_proportions() {
        let s = DataSplit::new(100, SplitFractions::default(), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (70, 15, 15));
        assert_eq!(s, DataSplit::new(100, SplitFractions::default(), 7).unwrap());
        assert_ne!(s, DataSplit::new(100, SplitFractions::default(), 8).unwrap());
    }

    #[test]
    fn rejects_bad_fractions_and_tiny_sets() {
        let f = SplitFractions {
            train: 0.5,
            validation: 0.2,
            test: 0.2,
        };
        assert!(DataSplit::new(100, f, 0).is_err());
        assert!(DataSplit::new(3, SplitFractions::default(), 0).is_err());
    }

    proptest! {
        #[test]
        fn partitions_the_index_set(n in 4usize..500, seed in any::<u64>()) {
            let s = DataSplit::new(n, SplitFractions::default(), seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
