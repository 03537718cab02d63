use serde::{Deserialize, Serialize};

use super::normalize::NormalizationStats;
use super::window::WindowMatrix;
use crate::error::{Error, Result};
use crate::simnet::{DetectorRecord, N_FEATURES};

/// Per-detector mean and population standard deviation of normalized control
/// records, one row per detector position in a 10 s batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlProfile {
    pub detectors: usize,
    pub batches: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ControlProfile {
    /// Fit from attack-free records normalized with `stats`. Records are
    /// grouped into batches of `detectors` consecutive rows.
    pub fn fit(control: &[DetectorRecord], detectors: usize, stats: &NormalizationStats) -> Result<Self> {
        if detectors == 0 {
            return Err(Error::Config("control profile needs at least one detector".into()));
        }
        let batches = control.len() / detectors;
        if batches < 2 {
            return Err(Error::Data(format!(
                "control data has {batches} complete batch(es); at least 2 are needed"
            )));
        }
        let cells = detectors * N_FEATURES;
        let mut mean = vec![0.0; cells];
        let mut sq = vec![0.0; cells];
        for batch in control.chunks_exact(detectors) {
            for (i, r) in batch.iter().enumerate() {
                let v = stats.apply(&r.features);
                for j in 0..N_FEATURES {
                    mean[i * N_FEATURES + j] += v[j];
                }
            }
        }
        let n = batches as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        for batch in control.chunks_exact(detectors) {
            for (i, r) in batch.iter().enumerate() {
                let v = stats.apply(&r.features);
                for j in 0..N_FEATURES {
                    let d = v[j] - mean[i * N_FEATURES + j];
                    sq[i * N_FEATURES + j] += d * d;
                }
            }
        }
        let std = sq.iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self {
            detectors,
            batches,
            mean,
            std,
        })
    }

    /// Tile a per-detector matrix to `rows × 23`: row `i` takes detector row `i mod D`.
    fn tile(&self, source: &[f64], rows: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows * N_FEATURES);
        for i in 0..rows {
            let d = i % self.detectors;
            out.extend_from_slice(&source[d * N_FEATURES..(d + 1) * N_FEATURES]);
        }
        out
    }

    pub fn mean_matrix(&self, rows: usize) -> Vec<f64> {
        self.tile(&self.mean, rows)
    }

    pub fn std_matrix(&self, rows: usize) -> Vec<f64> {
        self.tile(&self.std, rows)
    }
}

/// Three stacked `R × 23` layers: window, control mean, control std.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredTensor {
    pub rows: usize,
    pub values: Vec<f64>,
}

impl LayeredTensor {
    pub fn layer(&self, k: usize) -> &[f64] {
        let n = self.rows * N_FEATURES;
        &self.values[k * n..(k + 1) * n]
    }
}

pub fn layered_tensor(window: &WindowMatrix, profile: &ControlProfile) -> LayeredTensor {
    let mut values = Vec::with_capacity(3 * window.values.len());
    values.extend_from_slice(&window.values);
    values.extend(profile.mean_matrix(window.rows));
    values.extend(profile.std_matrix(window.rows));
    LayeredTensor {
        rows: window.rows,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fit_minmax;
    use crate::simnet::Label;

    fn rec(v: f64) -> DetectorRecord {
        DetectorRecord {
            begin: 0,
            end: 10,
            detector_id: "d".into(),
            label: Label::Normal,
            features: [v; N_FEATURES],
        }
    }

    fn unit_stats() -> NormalizationStats {
        fit_minmax(&[[0.0; N_FEATURES], [1.0; N_FEATURES]]).unwrap()
    }

    #[test]
    fn needs_two_batches() {
        let recs = vec![rec(0.1), rec(0.2)];
        assert!(ControlProfile::fit(&recs, 2, &unit_stats()).is_err());
        assert!(ControlProfile::fit(&recs, 1, &unit_stats()).is_ok());
    }

    #[test]
    fn identical_batches_have_zero_std() {
        let recs = vec![rec(0.1), rec(0.7), rec(0.1), rec(0.7)];
        let p = ControlProfile::fit(&recs, 2, &unit_stats()).unwrap();
        assert!(p.std.iter().all(|s| *s == 0.0));
        assert_eq!(p.mean[0], 0.1);
        assert_eq!(p.mean[N_FEATURES], 0.7);
    }

    #[test]
    fn two_point_statistics() {
        let recs = vec![rec(0.2), rec(0.4)];
        let p = ControlProfile::fit(&recs, 1, &unit_stats()).unwrap();
        assert!((p.mean[3] - 0.3).abs() < 1e-15);
        assert!((p.std[3] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn layers_stack_window_and_tiled_statistics() {
        let recs = vec![rec(0.2), rec(0.6), rec(0.4), rec(0.8)];
        let p = ControlProfile::fit(&recs, 2, &unit_stats()).unwrap();
        let w = WindowMatrix {
            rows: 9,
            values: (0..9 * N_FEATURES).map(|i| i as f64 / 1000.0).collect(),
            label: Label::Normal,
            window_begin: 0,
            window_end: 10,
            first_row: 0,
        };
        let t = layered_tensor(&w, &p);
        assert_eq!(t.layer(0), &w.values[..]);
        assert!((t.layer(1)[0] - 0.3).abs() < 1e-15);
        assert!((t.layer(1)[N_FEATURES] - 0.7).abs() < 1e-15);
        assert!((t.layer(1)[2 * N_FEATURES] - 0.3).abs() < 1e-15);
        assert!(t.layer(2).iter().all(|s| *s >= 0.0));
    }
}
