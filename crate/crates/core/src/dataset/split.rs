use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;

/// Shuffled train/test index partition with `floor(ratio·n)` training items.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 5 {
        return Err(Error::Data(format!("need at least 5 samples to split, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Split));
    let n_train = (ratio * n as f64).floor() as usize;
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset<T> {
    pub train_inputs: Vec<T>,
    pub train_labels: Vec<u8>,
    pub test_inputs: Vec<T>,
    pub test_labels: Vec<u8>,
    pub ratio: f64,
    pub seed: u64,
}

pub fn split<T: Clone>(inputs: &[T], labels: &[u8], ratio: f64, seed: u64) -> Result<SplitDataset<T>> {
    if inputs.len() != labels.len() {
        return Err(Error::Shape(format!("{} inputs but {} labels", inputs.len(), labels.len())));
    }
    let (train, test) = split_indices(inputs.len(), ratio, seed)?;
    let pick = |ids: &[usize]| -> (Vec<T>, Vec<u8>) {
        (ids.iter().map(|&i| inputs[i].clone()).collect(), ids.iter().map(|&i| labels[i]).collect())
    };
    let (train_inputs, train_labels) = pick(&train);
    let (test_inputs, test_labels) = pick(&test);
    Ok(SplitDataset {
        train_inputs,
        train_labels,
        test_inputs,
        test_labels,
        ratio,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn eighty_twenty() {
        let x: Vec<usize> = (0..10).collect();
        let s = split(&x, &[1; 10], 0.8, 1).unwrap();
        assert_eq!((s.train_inputs.len(), s.test_inputs.len()), (8, 2));
        assert_eq!(s, split(&x, &[1; 10], 0.8, 1).unwrap());
        let train: HashSet<_> = s.train_inputs.iter().collect();
        assert!(s.test_inputs.iter().all(|t| !train.contains(t)));
    }

    #[test]
    fn too_small() {
        assert!(split_indices(4, 0.8, 0).is_err());
        assert!(split_indices(10, 1.0, 0).is_err());
    }
}
