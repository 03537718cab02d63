use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Attribution, AttributionMeta, Granularity, Method};
use crate::error::{Error, Result};
use crate::neuralnet::InputShape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionEntry {
    pub feature: String,
    pub index: usize,
    pub score: f64,
    /// "NORMAL" for positive scores, "HACKED" for negative, "NONE" for 0.
    pub direction: String,
}

/// JSON form of an attribution; entries ordered by |score|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionFile {
    pub method: Method,
    pub granularity: Granularity,
    pub shape: InputShape,
    pub prediction: f64,
    pub base_value: Option<f64>,
    pub metadata: AttributionMeta,
    pub entries: Vec<AttributionEntry>,
}

impl From<&Attribution> for AttributionFile {
    fn from(a: &Attribution) -> Self {
        let entries = a
            .ranked()
            .into_iter()
            .map(|(index, score)| AttributionEntry {
                feature: a.index_name(index),
                index,
                score,
                direction: match score.partial_cmp(&0.0) {
                    Some(std::cmp::Ordering::Greater) => "NORMAL",
                    Some(std::cmp::Ordering::Less) => "HACKED",
                    _ => "NONE",
                }
                .into(),
            })
            .collect();
        Self {
            method: a.method,
            granularity: a.granularity,
            shape: a.shape,
            prediction: a.prediction,
            base_value: a.base_value,
            metadata: a.metadata.clone(),
            entries,
        }
    }
}

pub fn attribution_json(a: &Attribution) -> Result<String> {
    Ok(serde_json::to_string_pretty(&AttributionFile::from(a))?)
}

/// R×cols grid of cell scores, with a header of feature names.
pub fn heatmap_csv(a: &Attribution) -> Result<String> {
    if a.granularity != Granularity::Cell {
        return Err(Error::Config("heatmap needs a cell-level attribution".into()));
    }
    let cols = a.shape.cols;
    let mut out = String::from("row");
    for c in 0..cols {
        let name = if cols == crate::simnet::N_FEATURES { crate::simnet::FEATURE_NAMES[c].to_string() } else { format!("col{c}") };
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for r in 0..a.shape.rows {
        let _ = write!(out, "{r}");
        for c in 0..cols {
            let _ = write!(out, ",{}", a.score(r * cols + c));
        }
        out.push('\n');
    }
    Ok(out)
}

/// `pc1,pc2,label` rows for a scatter plot.
pub fn pca_scatter_csv(plot: &[[f64; 2]], labels: &[u8]) -> Result<String> {
    if plot.len() != labels.len() {
        return Err(Error::Shape(format!("{} points but {} labels", plot.len(), labels.len())));
    }
    let mut out = String::from("pc1,pc2,label\n");
    for (p, &y) in plot.iter().zip(labels) {
        let _ = writeln!(out, "{},{},{}", p[0], p[1], y);
    }
    Ok(out)
}
