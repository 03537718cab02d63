use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, predict_many, Attribution, AttributionMeta, Classifier, Granularity, Method};
use crate::error::{Error, Result};
use crate::neuralnet::InputShape;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimeConfig {
    pub n_samples: usize,
    /// Kernel width σ; `None` means 0.75·√M.
    pub kernel_width: Option<f64>,
    pub ridge: f64,
    pub top_k: usize,
    pub seed: u64,
    /// Recorded in the output metadata only.
    pub baseline: String,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self { n_samples: 1000, kernel_width: None, ridge: 1e-3, top_k: 10, seed: 0, baseline: "ZERO".into() }
    }
}

/// Fit a kernel-weighted ridge surrogate on Bernoulli(0.5) masks of the
/// flattened input and keep the `top_k` largest coefficients. Positive
/// coefficients push towards NORMAL.
pub fn lime_explain<C: Classifier + ?Sized>(
    model: &C,
    input: &[f64],
    shape: InputShape,
    baseline: &[f64],
    cfg: &LimeConfig,
) -> Result<Attribution> {
    check_len("input", input.len(), shape.len())?;
    check_len("baseline", baseline.len(), shape.len())?;
    if cfg.n_samples < 50 {
        return Err(Error::Config(format!("LIME needs at least 50 samples, got {}", cfg.n_samples)));
    }
    if !(cfg.ridge >= 0.0) {
        return Err(Error::Config("LIME ridge penalty must be non-negative".into()));
    }
    let m = input.len();
    let sigma = cfg.kernel_width.unwrap_or(0.75 * (m as f64).sqrt());
    if !(sigma > 0.0) {
        return Err(Error::Config("LIME kernel width must be positive".into()));
    }

    // The first neighbour is the unperturbed input.
    let mut rng = stream(cfg.seed, Stream::Lime);
    let masks: Vec<Vec<bool>> = (0..cfg.n_samples)
        .map(|s| (0..m).map(|_| s == 0 || rng.random_bool(0.5)).collect())
        .collect();
    let perturbed: Vec<Vec<f64>> = masks
        .iter()
        .map(|z| z.iter().enumerate().map(|(i, &keep)| if keep { input[i] } else { baseline[i] }).collect())
        .collect();
    let y = predict_many(model, &perturbed)?;
    let w: Vec<f64> = masks
        .iter()
        .map(|z| {
            let d2 = z.iter().filter(|&&k| !k).count() as f64;
            (-d2 / (sigma * sigma)).exp()
        })
        .collect();

    let mut meta = AttributionMeta {
        n_samples: cfg.n_samples,
        kernel_width: Some(sigma),
        seed: Some(cfg.seed),
        baseline: cfg.baseline.clone(),
        r_squared: None,
        warnings: Vec::new(),
    };
    let attribution = |scores, meta| Attribution {
        method: Method::Lime,
        granularity: Granularity::FlatFeature,
        shape,
        scores,
        base_value: None,
        prediction: y[0],
        metadata: meta,
    };

    if y.iter().all(|&v| v == y[0]) {
        meta.warnings.push("model output identical on every perturbation; attribution is zero".into());
        meta.r_squared = Some(1.0);
        return Ok(attribution(Default::default(), meta));
    }

    // Weighted centering removes the (unpenalized) intercept.
    let wsum: f64 = w.iter().sum();
    let ybar = w.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let mut zbar = vec![0.0; m];
    for (z, &wi) in masks.iter().zip(&w) {
        for (acc, &k) in zbar.iter_mut().zip(z) {
            if k {
                *acc += wi;
            }
        }
    }
    zbar.iter_mut().for_each(|v| *v /= wsum);

    let n = cfg.n_samples;
    // Rows scaled by √w so that XᵀX is the weighted Gram matrix.
    let xs = DMatrix::from_fn(n, m, |s, i| w[s].sqrt() * (f64::from(u8::from(masks[s][i])) - zbar[i]));
    let ys = DVector::from_fn(n, |s, _| w[s].sqrt() * (y[s] - ybar));
    let mut gram = xs.tr_mul(&xs);
    for i in 0..m {
        gram[(i, i)] += cfg.ridge;
    }
    let rhs = xs.tr_mul(&ys);
    let beta = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            meta.warnings.push("surrogate normal equations not positive definite; used least-squares fallback".into());
            gram.svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::Numerical(format!("LIME surrogate solve failed: {e}")))?
        }
    };

    let fitted = &xs * &beta;
    let ss_res: f64 = (&ys - &fitted).norm_squared();
    let ss_tot: f64 = ys.norm_squared();
    meta.r_squared = Some(if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 });

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| beta[b].abs().total_cmp(&beta[a].abs()).then(a.cmp(&b)));
    let scores = order.into_iter().take(cfg.top_k).map(|i| (i, beta[i])).collect();
    Ok(attribution(scores, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHAPE: InputShape = InputShape::new(1, 3, 4);

    fn weights() -> Vec<f64> {
        (0..12).map(|i| ((i as f64) * 0.7).sin()).collect()
    }

    #[test]
    fn linear_model_recovers_contributions() {
        let w = weights();
        let x: Vec<f64> = (0..12).map(|i| 0.2 + 0.05 * i as f64).collect();
        let model = |v: &[f64]| 0.1 + v.iter().zip(&weights()).map(|(a, b)| a * b).sum::<f64>();
        let cfg = LimeConfig { top_k: 12, seed: 3, ..Default::default() };
        let a = lime_explain(&model, &x, SHAPE, &vec![0.0; 12], &cfg).unwrap();
        for i in 0..12 {
            let truth = w[i] * x[i];
            assert!((a.score(i) - truth).abs() <= 1e-2 * truth.abs().max(1e-3), "{i}: {} vs {truth}", a.score(i));
        }
        assert!(a.metadata.r_squared.unwrap() > 0.999);
    }

    #[test]
    fn feature_at_baseline_gets_nothing() {
        let mut x = vec![0.5; 12];
        x[4] = 0.0;
        let model = |v: &[f64]| v.iter().zip(&weights()).map(|(a, b)| a * b).sum::<f64>();
        let cfg = LimeConfig { top_k: 12, ..Default::default() };
        let a = lime_explain(&model, &x, SHAPE, &vec![0.0; 12], &cfg).unwrap();
        assert!(a.score(4).abs() < 1e-6);
    }

    #[test]
    fn constant_model_warns() {
        let model = |_: &[f64]| 0.3;
        let a = lime_explain(&model, &vec![1.0; 12], SHAPE, &vec![0.0; 12], &LimeConfig::default()).unwrap();
        assert!(a.scores.is_empty());
        assert_eq!(a.metadata.warnings.len(), 1);
    }

    #[test]
    fn too_few_samples() {
        let model = |_: &[f64]| 0.3;
        let cfg = LimeConfig { n_samples: 49, ..Default::default() };
        assert!(lime_explain(&model, &vec![1.0; 12], SHAPE, &vec![0.0; 12], &cfg).is_err());
    }
}
