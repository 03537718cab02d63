//! Synthetic minority over-sampling.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Squared Euclidean distance.
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest other members of `pool` for each member.
fn neighbours(inputs: &[Vec<f64>], pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    pool.iter()
        .map(|&i| {
            let mut d: Vec<(f64, usize)> = pool
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (dist2(&inputs[i], &inputs[j]), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Oversample the minority class of a binary set until both classes are equal.
///
/// Each synthetic sample interpolates between a random minority sample and one
/// of its `k` nearest minority neighbours. The combined set is shuffled with
/// the seed; an already balanced set is returned unchanged.
pub fn smote(inputs: &[Vec<f64>], labels: &[u8], k: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    let (x, y, _) = smote_indexed(inputs, labels, k, seed)?;
    Ok((x, y))
}

/// [`smote`], also returning for each output sample the index of the input it
/// copies, or `None` for synthetic samples.
pub fn smote_indexed(
    inputs: &[Vec<f64>],
    labels: &[u8],
    k: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<u8>, Vec<Option<usize>>)> {
    if inputs.len() != labels.len() {
        return Err(Error::Shape(format!("{} inputs but {} labels", inputs.len(), labels.len())));
    }
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() != 2 {
        return Err(Error::Data(format!("SMOTE needs exactly two classes, found {}", classes.len())));
    }
    let count = |c: u8| labels.iter().filter(|&&l| l == c).count();
    let (a, b) = (count(classes[0]), count(classes[1]));
    if a == b {
        return Ok((inputs.to_vec(), labels.to_vec(), (0..labels.len()).map(Some).collect()));
    }
    let (minority, needed) = if a < b { (classes[0], b - a) } else { (classes[1], a - b) };
    let pool: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == minority).collect();
    if pool.len() < 2 {
        return Err(Error::Data("SMOTE needs at least two minority samples".into()));
    }
    let k = k.clamp(1, pool.len() - 1);
    let nn = neighbours(inputs, &pool, k);

    let mut rng = rng::stream(seed, Stream::Smote);
    let mut synthetic = Vec::with_capacity(needed);
    for _ in 0..needed {
        let p = rng.random_range(0..pool.len());
        let x = &inputs[pool[p]];
        let z = &inputs[nn[p][rng.random_range(0..k)]];
        let u: f64 = rng.random();
        synthetic.push(x.iter().zip(z).map(|(xi, zi)| xi + u * (zi - xi)).collect::<Vec<f64>>());
    }
    let total = labels.len() + needed;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let mut out_x = Vec::with_capacity(total);
    let mut out_y = Vec::with_capacity(total);
    let mut origin = Vec::with_capacity(total);
    for i in order {
        if i < labels.len() {
            out_x.push(inputs[i].clone());
            out_y.push(labels[i]);
            origin.push(Some(i));
        } else {
            out_x.push(synthetic[i - labels.len()].clone());
            out_y.push(minority);
            origin.push(None);
        }
    }
    Ok((out_x, out_y, origin))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_input_is_returned_unchanged() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![0, 1, 0, 1];
        let (bx, by) = smote(&x, &y, 5, 1).unwrap();
        assert_eq!((bx, by), (x, y));
    }

    #[test]
    fn two_point_minority_interpolates_on_the_diagonal() {
        let mut x = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let mut y = vec![0, 0];
        for i in 0..3 {
            x.push(vec![5.0 + i as f64, -5.0]);
            y.push(1);
        }
        let (bx, by) = smote(&x, &y, 5, 3).unwrap();
        let synth: Vec<&Vec<f64>> = bx
            .iter()
            .zip(&by)
            .filter(|(v, l)| **l == 0 && !x.contains(v))
            .map(|(v, _)| v)
            .collect();
        assert_eq!(synth.len(), 1);
        assert_eq!(synth[0][0], synth[0][1]);
        assert!((0.0..=1.0).contains(&synth[0][0]));
    }

    #[test]
    fn counts_balance() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64, (i * i) as f64 % 7.0]).collect();
        let y: Vec<u8> = (0..100).map(|i| u8::from(i >= 10)).collect();
        let (bx, by) = smote(&x, &y, 5, 7).unwrap();
        assert_eq!(bx.len(), 180);
        assert_eq!(by.iter().filter(|&&l| l == 0).count(), 90);
        assert_eq!(by.iter().filter(|&&l| l == 1).count(), 90);
        assert_eq!(smote(&x, &y, 5, 7).unwrap(), (bx, by));
    }

    #[test]
    fn error_paths() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(smote(&x, &[1, 1, 1], 5, 0).is_err());
        assert!(smote(&x, &[0, 1, 1], 5, 0).is_err());
        assert!(smote(&x, &[0, 1], 5, 0).is_err());
    }
}
