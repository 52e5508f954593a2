use rand::seq::SliceRandom;

use crate::data::epochs::EpochSet;
use crate::error::{Error, Result};
use crate::rng;

/// Trial indices of a train/validation split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    /// Training trials in batches; only the last may be short.
    pub batches: Vec<Vec<usize>>,
    pub val: Vec<usize>,
}

impl Split {
    pub fn train(&self) -> impl Iterator<Item = usize> + '_ {
        self.batches.iter().flatten().copied()
    }

    pub fn train_len(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

/// Stratified seeded split. Each class contributes `round(n_c * val_fraction)`
/// trials to validation; the rest are shuffled together and chunked.
pub fn split_and_batch(
    e: &EpochSet,
    val_fraction: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Split> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::param(format!(
            "validation fraction {val_fraction} outside [0, 1)"
        )));
    }
    if batch_size == 0 {
        return Err(Error::param("batch size must be at least 1"));
    }
    let mut rng = rng::seeded(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..e.class_count() {
        let mut idx: Vec<usize> = (0..e.trials())
            .filter(|&i| e.labels()[i] == class)
            .collect();
        idx.shuffle(&mut rng);
        let n_val = (idx.len() as f64 * val_fraction).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    if batch_size > train.len() {
        return Err(Error::param(format!(
            "batch size {batch_size} exceeds {} training trials",
            train.len()
        )));
    }
    train.shuffle(&mut rng);
    val.sort_unstable();
    Ok(Split {
        batches: train.chunks(batch_size).map(<[usize]>::to_vec).collect(),
        val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn set(labels: Vec<usize>, classes: usize) -> EpochSet {
        let data = Tensor::<f32>::zeros(&[labels.len(), 1, 2]).unwrap();
        EpochSet::new(data, labels, 1.0, classes).unwrap()
    }

    #[test]
    fn no_validation() {
        let s = split_and_batch(&set(vec![0, 1, 0, 1, 1], 2), 0.0, 2, 1).unwrap();
        assert!(s.val.is_empty());
        let mut all: Vec<_> = s.train().collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn batch_sizes() {
        let s = split_and_batch(&set([0, 1].repeat(5), 2), 0.0, 4, 9).unwrap();
        let sizes: Vec<_> = s.batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn bad_arguments() {
        let e = set(vec![0, 1, 0, 1], 2);
        assert!(split_and_batch(&e, 1.0, 1, 0).is_err());
        assert!(split_and_batch(&e, -0.1, 1, 0).is_err());
        assert!(split_and_batch(&e, 0.0, 0, 0).is_err());
        assert!(matches!(
            split_and_batch(&e, 0.5, 3, 0),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn seeded() {
        let e = set([0, 1, 2].repeat(10), 3);
        assert_eq!(
            split_and_batch(&e, 0.3, 4, 5).unwrap(),
            split_and_batch(&e, 0.3, 4, 5).unwrap()
        );
        assert_ne!(
            split_and_batch(&e, 0.3, 4, 5).unwrap(),
            split_and_batch(&e, 0.3, 4, 6).unwrap()
        );
    }

    proptest! {
        #[test]
        fn disjoint_and_stratified(
            labels in prop::collection::vec(0usize..3, 8..60),
            vf in 0.0f64..0.6,
            seed in any::<u64>(),
        ) {
            let e = set(labels.clone(), 3);
            let Ok(s) = split_and_batch(&e, vf, 1, seed) else { return Ok(()) };
            let mut seen = vec![0u8; labels.len()];
            for i in s.train().chain(s.val.iter().copied()) {
                seen[i] += 1;
            }
            prop_assert!(seen.iter().all(|&n| n == 1));
            // Counting oracle: each class's validation count is within one
            // trial of its overall count times the validation fraction.
            for c in 0..3 {
                let n_c = labels.iter().filter(|&&l| l == c).count() as f64;
                let v_c = s.val.iter().filter(|&&i| labels[i] == c).count() as f64;
                let expected = n_c * vf;
                prop_assert!((v_c - expected).abs() <= 1.0 + 1e-9, "class {}: {} vs {}", c, v_c, expected);
            }
        }
    }
}
