use serde::{Deserialize, Serialize};

use crate::digest::{digest_f64s, sha256_hex};
use crate::error::{Error, Result};
use crate::simnet::N_FEATURES;

/// Per-feature min–max scaling fitted on a set of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Features that were constant over the fitted rows; they normalize to 0.
    pub degenerate: Vec<bool>,
    /// Digest of the rows the scaler was fitted on.
    pub fitted_on: String,
}

/// Fit per-feature minima and maxima.
pub fn fit_minmax<'a, I>(rows: I) -> Result<NormalizationStats>
where
    I: IntoIterator<Item = &'a [f64; N_FEATURES]>,
{
    let mut min = vec![f64::INFINITY; N_FEATURES];
    let mut max = vec![f64::NEG_INFINITY; N_FEATURES];
    let mut fitted = Vec::new();
    for row in rows {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Data(format!("non-finite value {v} in feature F{}", j + 1)));
            }
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
        fitted.extend_from_slice(row);
    }
    if fitted.is_empty() {
        return Err(Error::Data("cannot fit a scaler on zero records".into()));
    }
    let degenerate = min.iter().zip(&max).map(|(a, b)| a == b).collect();
    Ok(NormalizationStats {
        min,
        max,
        degenerate,
        fitted_on: digest_f64s(&fitted),
    })
}

impl NormalizationStats {
    /// Scale one feature vector into [0, 1], clamping values outside the fitted range.
    pub fn apply(&self, features: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        for j in 0..N_FEATURES {
            if !self.degenerate[j] {
                out[j] = ((features[j] - self.min[j]) / (self.max[j] - self.min[j])).clamp(0.0, 1.0);
            }
        }
        out
    }

    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("stats serialize").as_bytes())
    }
}

pub fn apply_minmax(features: &[f64; N_FEATURES], stats: &NormalizationStats) -> [f64; N_FEATURES] {
    stats.apply(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(f7: f64) -> [f64; N_FEATURES] {
        let mut r = [1.0; N_FEATURES];
        r[6] = f7;
        r
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(fit_minmax(std::iter::empty()).is_err());
    }

    #[test]
    fn single_record_fits_itself() {
        let r = row(4.0);
        let s = fit_minmax([&r]).unwrap();
        assert_eq!(s.min, r.to_vec());
        assert_eq!(s.max, r.to_vec());
        assert!(s.degenerate.iter().all(|d| *d));
        assert!(apply_minmax(&r, &s).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn min_max_and_clamp() {
        let rows = [row(0.0), row(5.0), row(10.0)];
        let s = fit_minmax(&rows).unwrap();
        assert_eq!((s.min[6], s.max[6]), (0.0, 10.0));
        assert!(s.degenerate[0] && !s.degenerate[6]);
        assert_eq!(s.apply(&row(0.0))[6], 0.0);
        assert_eq!(s.apply(&row(10.0))[6], 1.0);
        assert_eq!(s.apply(&row(5.0))[6], 0.5);
        assert_eq!(s.apply(&row(11.0))[6], 1.0);
        assert_eq!(s.apply(&row(-3.0))[6], 0.0);
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(a in -1e3f64..1e3, b in -1e3f64..1e3, lo in -1e3f64..0.0, hi in 0.0f64..1e3) {
            let s = fit_minmax(&[row(lo), row(hi + 1.0)]).unwrap();
            let (fa, fb) = (s.apply(&row(a))[6], s.apply(&row(b))[6]);
            prop_assert!((0.0..=1.0).contains(&fa));
            if a <= b { prop_assert!(fa <= fb); }
            prop_assert_eq!(s.apply(&row(lo))[6], 0.0);
            prop_assert_eq!(s.apply(&row(hi + 1.0))[6], 1.0);
        }
    }
}
