use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::neuralnet::InputShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Occlusion,
    Lime,
    Shap,
}

/// What an attribution index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Granularity {
    /// `row * cols + col` in the spatial grid.
    Cell,
    /// Feature column.
    Column,
    /// Index into the flattened C×R×cols input.
    FlatFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMeta {
    pub n_samples: usize,
    pub kernel_width: Option<f64>,
    pub seed: Option<u64>,
    pub baseline: String,
    /// Weighted R² of the LIME surrogate.
    pub r_squared: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub method: Method,
    pub granularity: Granularity,
    pub shape: InputShape,
    pub scores: BTreeMap<usize, f64>,
    /// φ₀ = f(baseline) for SHAP.
    pub base_value: Option<f64>,
    /// Model output on the explained input.
    pub prediction: f64,
    pub metadata: AttributionMeta,
}

impl Attribution {
    pub fn score(&self, index: usize) -> f64 {
        self.scores.get(&index).copied().unwrap_or(0.0)
    }

    /// Number of addressable indices for this granularity.
    pub fn index_space(&self) -> usize {
        match self.granularity {
            Granularity::Cell => self.shape.plane(),
            Granularity::Column => self.shape.cols,
            Granularity::FlatFeature => self.shape.len(),
        }
    }

    /// Scores ordered by decreasing magnitude; ties keep index order.
    pub fn ranked(&self) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self.scores.iter().map(|(&i, &s)| (i, s)).collect();
        v.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        v
    }

    pub fn top(&self, k: usize) -> Vec<(usize, f64)> {
        let mut v = self.ranked();
        v.truncate(k);
        v
    }

    pub fn sum(&self) -> f64 {
        self.scores.values().sum()
    }

    /// Human-readable name for an index, using the F1..F23 schema names for
    /// 23-column inputs.
    pub fn index_name(&self, index: usize) -> String {
        let col_name = |c: usize| {
            if self.shape.cols == crate::simnet::N_FEATURES {
                crate::simnet::FEATURE_NAMES[c].to_string()
            } else {
                format!("col{c}")
            }
        };
        let cols = self.shape.cols;
        match self.granularity {
            Granularity::Column => col_name(index),
            Granularity::Cell => format!("r{}:{}", index / cols, col_name(index % cols)),
            Granularity::FlatFeature => {
                let plane = self.shape.plane();
                let (c, rest) = (index / plane, index % plane);
                format!("c{}:r{}:{}", c, rest / cols, col_name(rest % cols))
            }
        }
    }
}
