use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VARIANCE_TARGET: f64 = 0.90;

/// Principal axes of a data matrix. Each component's largest-magnitude
/// entry is positive, which fixes the SVD sign ambiguity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Orthonormal rows, by decreasing explained variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub k: usize,
    pub coords: Vec<Vec<f64>>,
    /// First two coordinates of every row, for plotting.
    pub plot: Vec<[f64; 2]>,
}

pub fn pca_fit(data: &[Vec<f64>]) -> Result<PcaModel> {
    let n = data.len();
    if n < 2 {
        return Err(Error::Data(format!("PCA needs at least 2 rows, got {n}")));
    }
    let f = data[0].len();
    if f == 0 || data.iter().any(|r| r.len() != f) {
        return Err(Error::Shape("PCA rows must be non-empty and equally long".into()));
    }
    let mut mean = vec![0.0; f];
    for row in data {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, f, |i, j| data[i][j] - mean[j]);
    let total: f64 = centered.norm_squared();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numerical("data has zero (or non-finite) variance".into()));
    }
    let svd = centered.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(order.len());
    let mut explained_variance = Vec::with_capacity(order.len());
    let mut explained_variance_ratio = Vec::with_capacity(order.len());
    for &k in &order {
        let mut row: Vec<f64> = vt.row(k).iter().copied().collect();
        let pivot = row.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        let s2 = svd.singular_values[k].powi(2);
        components.push(row);
        explained_variance.push(s2 / (n - 1) as f64);
        explained_variance_ratio.push(s2 / total);
    }
    Ok(PcaModel { mean, components, explained_variance, explained_variance_ratio })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Smallest k whose cumulative explained-variance ratio reaches `target`.
    pub fn components_for(&self, target: f64) -> Result<usize> {
        if !(target > 0.0 && target <= 1.0) {
            return Err(Error::Config(format!("variance target must be in (0, 1], got {target}")));
        }
        let mut acc = 0.0;
        for (i, r) in self.explained_variance_ratio.iter().enumerate() {
            acc += r;
            // Absorb rounding so that a target of exactly 1 is reachable.
            if acc >= target - 1e-12 {
                return Ok(i + 1);
            }
        }
        Ok(self.explained_variance_ratio.len())
    }

    pub fn transform(&self, row: &[f64], k: usize) -> Vec<f64> {
        self.components[..k.min(self.components.len())]
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &s) in self.components.iter().zip(coords) {
            for (o, a) in out.iter_mut().zip(c) {
                *o += s * a;
            }
        }
        out
    }
}

/// Project onto `k` components, or onto the fewest that reach
/// `variance_target` when `k` is `None`.
pub fn pca_project(model: &PcaModel, data: &[Vec<f64>], k: Option<usize>, variance_target: f64) -> Result<PcaProjection> {
    if let Some(row) = data.iter().find(|r| r.len() != model.dim()) {
        return Err(Error::Shape(format!("row has {} values, PCA model expects {}", row.len(), model.dim())));
    }
    let k = match k {
        Some(0) => return Err(Error::Config("k must be positive".into())),
        Some(k) => k.min(model.components.len()),
        None => model.components_for(variance_target)?,
    };
    let keep = k.max(2).min(model.components.len());
    let full: Vec<Vec<f64>> = data.iter().map(|r| model.transform(r, keep)).collect();
    let plot = full.iter().map(|c| [c[0], c.get(1).copied().unwrap_or(0.0)]).collect();
    let coords = full.into_iter().map(|mut c| {
        c.truncate(k);
        c
    });
    Ok(PcaProjection { k, coords: coords.collect(), plot })
}
