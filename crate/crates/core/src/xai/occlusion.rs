use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_len, predict_many, Attribution, AttributionMeta, Classifier, Granularity, Method};
use crate::dataset::ControlProfile;
use crate::error::{Error, Result};
use crate::neuralnet::InputShape;

/// Value that replaces occluded or masked cells in the window channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BaselinePolicy {
    /// The min–max floor.
    #[default]
    Zero,
    /// Per-detector mean of the control run.
    ControlMean,
}

impl BaselinePolicy {
    pub fn name(self) -> &'static str {
        match self {
            BaselinePolicy::Zero => "ZERO",
            BaselinePolicy::ControlMean => "CONTROL_MEAN",
        }
    }
}

/// Build a full-shape baseline for `input`. Channel 0 (the window) follows
/// the policy; any statistics channels are copied from the input so masking
/// only ever perturbs observed traffic.
pub fn baseline_tensor(
    policy: BaselinePolicy,
    shape: InputShape,
    input: &[f64],
    profile: Option<&ControlProfile>,
) -> Result<Vec<f64>> {
    check_len("input", input.len(), shape.len())?;
    let mut out = input.to_vec();
    let plane = shape.plane();
    match policy {
        BaselinePolicy::Zero => out[..plane].fill(0.0),
        BaselinePolicy::ControlMean => {
            let profile = profile.ok_or_else(|| Error::Config("CONTROL_MEAN baseline needs a control profile".into()))?;
            let mean = profile.mean_matrix(shape.rows);
            check_len("control mean", mean.len(), plane)?;
            out[..plane].copy_from_slice(&mean);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcclusionConfig {
    pub patch_h: usize,
    pub patch_w: usize,
    pub stride: usize,
    pub baseline: BaselinePolicy,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self { patch_h: 1, patch_w: 1, stride: 1, baseline: BaselinePolicy::Zero }
    }
}

/// Slide a patch over the R×cols grid, replace it (in every channel) with
/// `baseline`, and score each cell with the largest |ΔP| among the patches
/// covering it. Cells no patch reaches score 0.
pub fn occlusion_map<C: Classifier + ?Sized>(
    model: &C,
    input: &[f64],
    shape: InputShape,
    baseline: &[f64],
    cfg: &OcclusionConfig,
) -> Result<Attribution> {
    check_len("input", input.len(), shape.len())?;
    check_len("baseline", baseline.len(), shape.len())?;
    let (ph, pw, stride) = (cfg.patch_h, cfg.patch_w, cfg.stride);
    if ph == 0 || pw == 0 || stride == 0 {
        return Err(Error::Config("occlusion patch and stride must be positive".into()));
    }
    if ph > shape.rows || pw > shape.cols {
        return Err(Error::Config(format!(
            "occlusion patch {ph}x{pw} exceeds input grid {}x{}",
            shape.rows, shape.cols
        )));
    }
    let p0 = model.predict_proba(input)?;
    let positions: Vec<(usize, usize)> = (0..=shape.rows - ph)
        .step_by(stride)
        .flat_map(|r| (0..=shape.cols - pw).step_by(stride).map(move |c| (r, c)))
        .collect();
    let occluded: Vec<Vec<f64>> = positions
        .iter()
        .map(|&(r0, c0)| {
            let mut x = input.to_vec();
            for ch in 0..shape.channels {
                for r in r0..r0 + ph {
                    let s = shape.index(ch, r, c0);
                    x[s..s + pw].copy_from_slice(&baseline[s..s + pw]);
                }
            }
            x
        })
        .collect();
    let probs = predict_many(model, &occluded)?;

    let mut grid = vec![0.0f64; shape.plane()];
    for (&(r0, c0), p) in positions.iter().zip(probs) {
        let delta = (p0 - p).abs().min(1.0);
        for r in r0..r0 + ph {
            for c in c0..c0 + pw {
                let cell = &mut grid[r * shape.cols + c];
                *cell = cell.max(delta);
            }
        }
    }
    Ok(Attribution {
        method: Method::Occlusion,
        granularity: Granularity::Cell,
        shape,
        scores: grid.into_iter().enumerate().collect::<BTreeMap<_, _>>(),
        base_value: None,
        prediction: p0,
        metadata: AttributionMeta {
            n_samples: positions.len(),
            kernel_width: None,
            seed: None,
            baseline: cfg.baseline.name().into(),
            r_squared: None,
            warnings: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHAPE: InputShape = InputShape::new(1, 4, 5);

    fn input() -> Vec<f64> {
        (0..SHAPE.len()).map(|i| 0.1 + 0.04 * i as f64).collect()
    }

    #[test]
    fn constant_model_scores_zero() {
        let m = |_: &[f64]| 0.7;
        let a = occlusion_map(&m, &input(), SHAPE, &vec![0.0; 20], &OcclusionConfig::default()).unwrap();
        assert_eq!(a.scores.len(), 20);
        assert!(a.scores.values().all(|&s| s == 0.0));
    }

    #[test]
    fn single_cell_model_touches_only_that_cell() {
        let m = |x: &[f64]| 1.0 / (1.0 + (-3.0 * x[0]).exp());
        let a = occlusion_map(&m, &input(), SHAPE, &vec![0.0; 20], &OcclusionConfig::default()).unwrap();
        assert!(a.score(0) > 0.0);
        assert!((1..20).all(|i| a.score(i) == 0.0));
    }

    #[test]
    fn patch_covering_takes_max() {
        let m = |x: &[f64]| x[6].clamp(0.0, 1.0);
        let cfg = OcclusionConfig { patch_h: 2, patch_w: 2, stride: 1, ..Default::default() };
        let x = input();
        let a = occlusion_map(&m, &x, SHAPE, &vec![0.0; 20], &cfg).unwrap();
        // cell (1,1) lies under patches at (0,0),(0,1),(1,0),(1,1)
        for cell in [0, 1, 2, 5, 6, 7, 10, 11, 12] {
            assert!((a.score(cell) - x[6]).abs() < 1e-15, "cell {cell}");
        }
        assert_eq!(a.score(19), 0.0);
    }

    #[test]
    fn oversized_patch_rejected() {
        let m = |_: &[f64]| 0.5;
        let cfg = OcclusionConfig { patch_h: 5, ..Default::default() };
        assert!(occlusion_map(&m, &input(), SHAPE, &vec![0.0; 20], &cfg).is_err());
    }

    #[test]
    fn baseline_keeps_statistics_channels() {
        let shape = InputShape::new(3, 2, 2);
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let b = baseline_tensor(BaselinePolicy::Zero, shape, &x, None).unwrap();
        assert_eq!(&b[..4], &[0.0; 4]);
        assert_eq!(&b[4..], &x[4..]);
        assert!(baseline_tensor(BaselinePolicy::ControlMean, shape, &x, None).is_err());
    }
}
