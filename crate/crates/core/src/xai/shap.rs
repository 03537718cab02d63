use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, predict_many, Attribution, AttributionMeta, Classifier, Granularity, Method};
use crate::error::{Error, Result};
use crate::neuralnet::InputShape;
use crate::rng::{stream, Stream};

/// Column counts up to this are enumerated exactly.
pub const EXACT_MAX_COLUMNS: usize = 12;
const MAX_RESAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapConfig {
    pub n_coalitions: usize,
    pub seed: u64,
    pub exact_max_columns: usize,
    /// Recorded in the output metadata only.
    pub baseline: String,
}

impl Default for ShapConfig {
    fn default() -> Self {
        Self { n_coalitions: 2048, seed: 0, exact_max_columns: EXACT_MAX_COLUMNS, baseline: "CONTROL_MEAN".into() }
    }
}

fn binom(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel π(S) = (M−1) / (C(M,|S|)·|S|·(M−|S|)) for 0 < |S| < M.
pub fn shapley_kernel_weight(m: usize, size: usize) -> f64 {
    assert!(size > 0 && size < m, "kernel weight is infinite for empty or full coalitions");
    (m - 1) as f64 / (binom(m, size) * size as f64 * (m - size) as f64)
}

struct Design {
    coalitions: Vec<Vec<bool>>,
    weights: Vec<f64>,
}

fn exact_design(m: usize) -> Design {
    let mut d = Design { coalitions: Vec::new(), weights: Vec::new() };
    for bits in 1u64..(1u64 << m) - 1 {
        let z: Vec<bool> = (0..m).map(|j| bits >> j & 1 == 1).collect();
        let size = bits.count_ones() as usize;
        d.weights.push(shapley_kernel_weight(m, size));
        d.coalitions.push(z);
    }
    d
}

/// All size-1 and size-(M−1) coalitions with their exact weights, plus
/// coalitions drawn with size ∝ the kernel's size mass, sharing the mass of
/// sizes 2..M−2 equally.
fn sampled_design(m: usize, n: usize, rng: &mut impl Rng) -> Design {
    let mut d = Design { coalitions: Vec::new(), weights: Vec::new() };
    for j in 0..m {
        for size in [1, m - 1] {
            let z: Vec<bool> = (0..m).map(|i| (i == j) == (size == 1)).collect();
            d.weights.push(shapley_kernel_weight(m, size));
            d.coalitions.push(z);
        }
    }
    let sizes: Vec<usize> = (2..m - 1).collect();
    let mass: Vec<f64> = sizes.iter().map(|&s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
    let total: f64 = mass.iter().sum();
    let remaining = n.saturating_sub(2 * m);
    if sizes.is_empty() || remaining == 0 {
        return d;
    }
    let each = total / remaining as f64;
    for _ in 0..remaining {
        let mut u = rng.random::<f64>() * total;
        let mut size = *sizes.last().unwrap();
        for (&s, &w) in sizes.iter().zip(&mass) {
            if u < w {
                size = s;
                break;
            }
            u -= w;
        }
        let mut z = vec![false; m];
        for j in sample(rng, m, size) {
            z[j] = true;
        }
        d.coalitions.push(z);
        d.weights.push(each);
    }
    d
}

/// Constrained weighted least squares with Σφ = delta, solved by eliminating
/// the last coefficient. Returns `None` when the normal equations are singular.
fn solve(design: &Design, y: &[f64], delta: f64, m: usize) -> Option<Vec<f64>> {
    if m == 1 {
        return Some(vec![delta]);
    }
    let k = m - 1;
    let n = design.coalitions.len();
    let x = DMatrix::from_fn(n, k, |s, j| {
        let z = &design.coalitions[s];
        design.weights[s].sqrt() * (f64::from(u8::from(z[j])) - f64::from(u8::from(z[k])))
    });
    let t = DVector::from_fn(n, |s, _| {
        let last = if design.coalitions[s][k] { delta } else { 0.0 };
        design.weights[s].sqrt() * (y[s] - last)
    });
    let head = x.tr_mul(&x).cholesky()?.solve(&x.tr_mul(&t));
    let mut phi: Vec<f64> = head.iter().copied().collect();
    phi.push(delta - phi.iter().sum::<f64>());
    Some(phi)
}

/// KernelSHAP over feature columns: an absent column takes the baseline's
/// values in every row and channel. φ₀ = f(baseline) and Σφ = f(x) − φ₀ hold
/// by construction.
pub fn kernel_shap<C: Classifier + ?Sized>(
    model: &C,
    input: &[f64],
    shape: InputShape,
    baseline: &[f64],
    cfg: &ShapConfig,
) -> Result<Attribution> {
    check_len("input", input.len(), shape.len())?;
    check_len("baseline", baseline.len(), shape.len())?;
    let m = shape.cols;
    if m == 0 {
        return Err(Error::Shape("input has no columns".into()));
    }
    let exact = m <= cfg.exact_max_columns.min(20);
    if !exact && cfg.n_coalitions <= 2 * m {
        return Err(Error::Config(format!(
            "sampled KernelSHAP over {m} columns needs more than {} coalitions, got {}",
            2 * m,
            cfg.n_coalitions
        )));
    }
    let compose = |z: &[bool]| -> Vec<f64> {
        let mut v = input.to_vec();
        for (j, &present) in z.iter().enumerate() {
            if !present {
                for ch in 0..shape.channels {
                    for r in 0..shape.rows {
                        let i = shape.index(ch, r, j);
                        v[i] = baseline[i];
                    }
                }
            }
        }
        v
    };
    let fx = model.predict_proba(input)?;
    let phi0 = model.predict_proba(baseline)?;
    let delta = fx - phi0;

    let mut rng = stream(cfg.seed, Stream::Shap);
    let mut warnings = Vec::new();
    let mut attempt = 0;
    let (phi, n_samples) = loop {
        let design = if exact { exact_design(m) } else { sampled_design(m, cfg.n_coalitions, &mut rng) };
        let inputs: Vec<Vec<f64>> = design.coalitions.iter().map(|z| compose(z)).collect();
        let y: Vec<f64> = predict_many(model, &inputs)?.into_iter().map(|v| v - phi0).collect();
        if let Some(phi) = solve(&design, &y, delta, m) {
            break (phi, design.coalitions.len());
        }
        attempt += 1;
        if exact || attempt > MAX_RESAMPLES {
            return Err(Error::Numerical("KernelSHAP regression is singular".into()));
        }
        warnings.push(format!("singular coalition design; re-sampling (attempt {attempt})"));
    };

    Ok(Attribution {
        method: Method::Shap,
        granularity: Granularity::Column,
        shape,
        scores: phi.into_iter().enumerate().collect(),
        base_value: Some(phi0),
        prediction: fx,
        metadata: AttributionMeta {
            n_samples,
            kernel_width: None,
            seed: (!exact).then_some(cfg.seed),
            baseline: cfg.baseline.clone(),
            r_squared: None,
            warnings,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_weights() {
        assert!((shapley_kernel_weight(4, 1) - 3.0 / (4.0 * 3.0)).abs() < 1e-15);
        assert!((shapley_kernel_weight(4, 2) - 3.0 / (6.0 * 4.0)).abs() < 1e-15);
        assert_eq!(binom(23, 11), 1_352_078.0);
    }

    #[test]
    fn constant_model_zero() {
        let shape = InputShape::new(1, 2, 5);
        let a = kernel_shap(&|_: &[f64]| 0.4, &[1.0; 10], shape, &[0.0; 10], &ShapConfig::default()).unwrap();
        assert!(a.scores.values().all(|v| v.abs() < 1e-12));
        assert_eq!(a.base_value, Some(0.4));
    }

    #[test]
    fn single_column() {
        let shape = InputShape::new(1, 3, 1);
        let f = |x: &[f64]| x.iter().sum::<f64>();
        let a = kernel_shap(&f, &[1.0, 2.0, 3.0], shape, &[0.0; 3], &ShapConfig::default()).unwrap();
        assert_eq!(a.score(0), 6.0);
    }

    #[test]
    fn sampled_mode_efficiency_and_linear_recovery() {
        let shape = InputShape::new(1, 1, 16);
        let w: Vec<f64> = (0..16).map(|j| j as f64 - 7.5).collect();
        let f = |x: &[f64]| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let x = vec![1.0; 16];
        let cfg = ShapConfig { n_coalitions: 600, seed: 9, ..Default::default() };
        let a = kernel_shap(&f, &x, shape, &[0.0; 16], &cfg).unwrap();
        assert!((a.sum() + a.base_value.unwrap() - a.prediction).abs() < 1e-9);
        for j in 0..16 {
            assert!((a.score(j) - w[j]).abs() < 1e-8, "{j}");
        }
    }
}
