use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::model::CnnModel;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: AdamState::DEFAULT_LR,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch, measured during the epoch.
    pub epoch_loss: Vec<f64>,
    pub samples: usize,
    pub steps: u64,
}

/// Samples sorted by (label, values) so training depends on set contents only.
fn canonical_order(inputs: &[Vec<f64>], labels: &[u8]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..inputs.len()).collect();
    idx.sort_by(|&a, &b| {
        labels[a].cmp(&labels[b]).then_with(|| {
            inputs[a]
                .iter()
                .zip(&inputs[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    idx
}

/// Mini-batch Adam on mean binary cross-entropy. Samples are reshuffled at the
/// start of every epoch and the last partial batch is kept.
pub fn train(model: &mut CnnModel, inputs: &[Vec<f64>], labels: &[u8], cfg: &TrainConfig) -> Result<TrainReport> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::Data(format!(
            "training needs a non-empty set with one label per input ({} inputs, {} labels)",
            inputs.len(),
            labels.len()
        )));
    }
    let n_in = model.input_shape().len();
    if let Some(bad) = inputs.iter().position(|x| x.len() != n_in) {
        return Err(Error::Shape(format!(
            "sample {bad} has {} values, model expects {n_in}",
            inputs[bad].len()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut state = AdamState::new(model.params(), cfg.learning_rate);
    let mut rng = rng::stream(cfg.seed, Stream::Shuffle);
    let mut order = canonical_order(inputs, labels);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = model.loss_and_gradients(&xs, &ys)?;
            total += loss * batch.len() as f64;
            adam_step(model.params_mut(), &grads, &mut state)?;
        }
        epoch_loss.push(total / inputs.len() as f64);
    }
    Ok(TrainReport {
        epoch_loss,
        samples: inputs.len(),
        steps: state.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::InputShape;

    fn separable(n: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        (0..n)
            .map(|i| {
                let hacked = i % 2 == 0;
                (vec![if hacked { 1.0 } else { 0.0 }; 207], u8::from(!hacked))
            })
            .unzip()
    }

    #[test]
    fn learns_a_separable_set() {
        let (x, y) = separable(64);
        let mut m = CnnModel::new(InputShape::new(1, 9, 23), 2).unwrap();
        let cfg = TrainConfig {
            seed: 2,
            ..Default::default()
        };
        let report = train(&mut m, &x, &y, &cfg).unwrap();
        assert_eq!(report.epoch_loss.len(), 10);
        assert_eq!(report.steps, 20);
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(xi, &yi)| (m.forward(xi).unwrap() >= 0.5) == (yi == 1))
            .count();
        assert!(correct as f64 / x.len() as f64 >= 0.95);
        let first_half: f64 = report.epoch_loss[..5].iter().sum();
        let second_half: f64 = report.epoch_loss[5..].iter().sum();
        assert!(second_half <= first_half);
    }

    #[test]
    fn input_order_does_not_matter() {
        let (mut x, mut y) = separable(12);
        x[3][5] = 0.25;
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 5,
            seed: 9,
            ..Default::default()
        };
        let mut a = CnnModel::new(InputShape::new(1, 9, 23), 1).unwrap();
        let ra = train(&mut a, &x, &y, &cfg).unwrap();
        x.reverse();
        y.reverse();
        let mut b = CnnModel::new(InputShape::new(1, 9, 23), 1).unwrap();
        let rb = train(&mut b, &x, &y, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn shape_errors() {
        let mut m = CnnModel::new(InputShape::new(1, 9, 23), 1).unwrap();
        assert!(train(&mut m, &[vec![0.0; 10]], &[1], &TrainConfig::default()).is_err());
        assert!(train(&mut m, &[], &[], &TrainConfig::default()).is_err());
    }
}
