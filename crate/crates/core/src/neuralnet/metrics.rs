use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::model::CnnModel;
use crate::error::{Error, Result};

/// Precision, recall and F1 for one choice of positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl ClassScores {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            support: tp + fn_,
        }
    }
}

/// Binary confusion matrix with hacked (label 0) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub hacked: ClassScores,
    pub normal: ClassScores,
    pub macro_avg: ClassScores,
    pub threshold: f64,
}

impl Metrics {
    /// Build from predicted and true labels (1 normal, 0 hacked).
    pub fn from_labels(predicted: &[u8], truth: &[u8], threshold: f64) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p == 0, t == 0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let n = tp + fp + tn + fn_;
        let hacked = ClassScores::from_counts(tp, fp, fn_);
        let normal = ClassScores::from_counts(tn, fn_, fp);
        let macro_avg = ClassScores {
            precision: (hacked.precision + normal.precision) / 2.0,
            recall: (hacked.recall + normal.recall) / 2.0,
            f1: (hacked.f1 + normal.f1) / 2.0,
            support: n,
        };
        Self {
            n,
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, n),
            hacked,
            normal,
            macro_avg,
            threshold,
        }
    }

    /// One block in the layout of the detector performance table.
    pub fn table(&self, configuration: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<22} {:>12} {:>10} {:>8} {:>9}",
            "Configuration", "Accuracy (%)", "Precision", "Recall", "F1-Score"
        );
        for (tag, c) in [("hacked+", &self.hacked), ("normal+", &self.normal), ("macro", &self.macro_avg)] {
            let _ = writeln!(
                s,
                "{:<22} {:>12.2} {:>10.2} {:>8.2} {:>9.2}",
                format!("{configuration} [{tag}]"),
                self.accuracy * 100.0,
                c.precision,
                c.recall,
                c.f1
            );
        }
        let _ = write!(
            s,
            "confusion (hacked positive): TP={} FP={} TN={} FN={} (n={})",
            self.tp, self.fp, self.tn, self.fn_, self.n
        );
        s
    }
}

/// Predicted label: normal (1) when `p ≥ threshold`.
pub fn predict_label(p: f64, threshold: f64) -> u8 {
    u8::from(p >= threshold)
}

/// Score `model` on a labelled set; returns the metrics and per-sample probabilities.
pub fn evaluate(model: &CnnModel, inputs: &[Vec<f64>], labels: &[u8], threshold: f64) -> Result<(Metrics, Vec<f64>)> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::Data("evaluation needs a non-empty labelled set".into()));
    }
    let probs = predict_all(model, inputs)?;
    let predicted: Vec<u8> = probs.iter().map(|&p| predict_label(p, threshold)).collect();
    Ok((Metrics::from_labels(&predicted, labels, threshold), probs))
}

/// Probabilities for many inputs; order matches `inputs`.
pub fn predict_all(model: &CnnModel, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        inputs.par_iter().map(|x| model.forward(x)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        inputs.iter().map(|x| model.forward(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictor() {
        let y = [0, 1, 1, 0];
        let m = Metrics::from_labels(&y, &y, 0.5);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.hacked.f1, 1.0);
        assert_eq!(m.normal.f1, 1.0);
    }

    #[test]
    fn all_normal_on_balanced_set() {
        let truth = [0, 0, 1, 1];
        let m = Metrics::from_labels(&[1, 1, 1, 1], &truth, 0.5);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.hacked.recall, 0.0);
        assert_eq!(m.hacked.f1, 0.0);
    }

    #[test]
    fn hand_built_confusion() {
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        let mut add = |p: u8, t: u8, n: usize| {
            pred.extend(std::iter::repeat_n(p, n));
            truth.extend(std::iter::repeat_n(t, n));
        };
        add(0, 0, 46);
        add(0, 1, 9);
        add(1, 0, 4);
        add(1, 1, 41);
        let m = Metrics::from_labels(&pred, &truth, 0.5);
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (46, 9, 4, 41));
        assert!((m.hacked.precision - 46.0 / 55.0).abs() < 1e-15);
        assert!((m.hacked.recall - 46.0 / 50.0).abs() < 1e-15);
        let (p, r) = (46.0 / 55.0, 46.0 / 50.0);
        assert!((m.hacked.f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
        assert!((m.accuracy - 0.87).abs() < 1e-15);
        assert!((m.normal.precision - 41.0 / 45.0).abs() < 1e-15);
        assert!(m.table("10-second").contains("87.00"));
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(predict_label(0.5, 0.5), 1);
        assert_eq!(predict_label(0.4999, 0.5), 0);
    }
}
