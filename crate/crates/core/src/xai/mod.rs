//! Model-agnostic explanations (occlusion, LIME, KernelSHAP) and PCA.

mod attribution;
mod lime;
mod occlusion;
mod output;
mod pca;
mod shap;

pub use attribution::{Attribution, AttributionMeta, Granularity, Method};
pub use lime::{lime_explain, LimeConfig};
pub use occlusion::{baseline_tensor, occlusion_map, BaselinePolicy, OcclusionConfig};
pub use output::{attribution_json, heatmap_csv, pca_scatter_csv, AttributionEntry, AttributionFile};
pub use pca::{pca_fit, pca_project, PcaModel, PcaProjection, DEFAULT_VARIANCE_TARGET};
pub use shap::{kernel_shap, shapley_kernel_weight, ShapConfig, EXACT_MAX_COLUMNS};

use crate::error::{Error, Result};
use crate::neuralnet::CnnModel;

/// Anything producing P(NORMAL) for a flattened input.
pub trait Classifier: Sync {
    fn predict_proba(&self, x: &[f64]) -> Result<f64>;
}

impl Classifier for CnnModel {
    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.forward(x)
    }
}

impl<F> Classifier for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(self(x))
    }
}

/// Evaluate many inputs; results are in input order regardless of threading.
pub fn predict_many<C: Classifier + ?Sized>(model: &C, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        inputs.par_iter().map(|x| model.predict_proba(x)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        inputs.iter().map(|x| model.predict_proba(x)).collect()
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what} has {got} values, expected {want}")));
    }
    Ok(())
}
