//! Sorting misclassified windows into transitional-data and
//! model-limitation errors, with KernelSHAP evidence attached.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{window_spans, ControlProfile, WindowMeta, WindowSet};
use crate::error::{Error, Result};
use crate::neuralnet::predict_label;
use crate::simnet::{feature, RecordLog, Timeline, DetectorRecord};
use crate::xai::{
    baseline_tensor, kernel_shap, predict_many, Attribution, AttributionEntry, AttributionFile, BaselinePolicy,
    Classifier, ShapConfig,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
const TOP_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Normal windows starting this soon after an attack ends are still recovering.
    pub recover_seconds: f64,
    /// Percentile of control-run window mean vehicle number below which
    /// traffic counts as low.
    pub low_traffic_percentile: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { recover_seconds: 120.0, low_traffic_percentile: 25.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    TransitionalData,
    ModelLimitation,
    Uncategorized,
}

/// Sorted window means of raw mean vehicle number over an attack-free run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficReference {
    pub window_means: Vec<f64>,
}

fn mean_vehicle_number(rows: &[DetectorRecord]) -> f64 {
    rows.iter().map(|r| r.features[feature::MEAN_VEHICLE_NUMBER]).sum::<f64>() / rows.len() as f64
}

impl TrafficReference {
    pub fn from_control(control: &[DetectorRecord], rows: usize) -> Result<Self> {
        let mut window_means: Vec<f64> = window_spans(control, rows)
            .iter()
            .map(|s| mean_vehicle_number(&control[s.first_row..s.first_row + s.rows]))
            .collect();
        if window_means.is_empty() {
            return Err(Error::Data("control run is shorter than one window".into()));
        }
        window_means.sort_by(f64::total_cmp);
        Ok(Self { window_means })
    }

    /// Linearly interpolated percentile, `p` in [0, 100].
    pub fn percentile(&self, p: f64) -> f64 {
        let v = &self.window_means;
        let pos = (p.clamp(0.0, 100.0) / 100.0) * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorContext {
    pub seconds_since_attack_end: Option<f64>,
    pub mean_vehicle_number: f64,
    /// Control window-mean vehicle number at the 25th, 50th and 75th percentiles.
    pub control_percentiles: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCase {
    /// Position in the test set.
    pub index: usize,
    pub window: WindowMeta,
    pub true_label: u8,
    pub predicted: u8,
    pub probability: f64,
    pub shap: Attribution,
    pub context: ErrorContext,
}

/// Categorization rules plus the data they consult.
#[derive(Debug, Clone, PartialEq)]
pub struct Triager {
    pub thresholds: Thresholds,
    pub timeline: Option<Timeline>,
    pub reference: TrafficReference,
}

impl Triager {
    pub fn low_traffic_threshold(&self) -> f64 {
        self.reference.percentile(self.thresholds.low_traffic_percentile)
    }

    /// TRANSITIONAL_DATA: normal window predicted hacked that starts within
    /// the recovery period after an attack ends. MODEL_LIMITATION: hacked
    /// window predicted normal under low traffic.
    pub fn categorize(&self, case: &ErrorCase) -> Result<Category> {
        let timeline = self
            .timeline
            .as_ref()
            .ok_or_else(|| Error::Data("triage needs the scenario timeline".into()))?;
        let since = timeline.seconds_since_attack_end(case.window.begin as f64);
        Ok(match (case.true_label, case.predicted) {
            (1, 0) if since.is_some_and(|s| s <= self.thresholds.recover_seconds) => Category::TransitionalData,
            (0, 1) if case.context.mean_vehicle_number < self.low_traffic_threshold() => Category::ModelLimitation,
            _ => Category::Uncategorized,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriageConfig {
    pub thresholds: Thresholds,
    pub shap: ShapConfig,
    pub decision_threshold: f64,
}

impl Default for TriageConfig {
    fn default() -> Self {
        Self { thresholds: Thresholds::default(), shap: ShapConfig::default(), decision_threshold: 0.5 }
    }
}

/// Every misclassified test window, with SHAP attribution against the
/// control-mean baseline. Cases are ordered by window time.
pub fn collect_errors<C: Classifier + ?Sized>(
    model: &C,
    test: &WindowSet,
    log: &RecordLog,
    profile: &ControlProfile,
    reference: &TrafficReference,
    cfg: &TriageConfig,
) -> Result<Vec<ErrorCase>> {
    let probs = predict_many(model, &test.inputs)?;
    let shape = test.shape;
    let mut cases = Vec::new();
    for (index, (&p, &y)) in probs.iter().zip(&test.labels).enumerate() {
        let predicted = predict_label(p, cfg.decision_threshold);
        if predicted == y {
            continue;
        }
        let meta = test.meta[index];
        if meta.is_synthetic() {
            return Err(Error::Data(format!("test sample {index} is synthetic; triage needs real windows")));
        }
        let first = meta.first_row as usize;
        let rows = log
            .records
            .get(first..first + shape.rows)
            .ok_or_else(|| Error::Data(format!("test sample {index} points past the record log")))?;
        let input = &test.inputs[index];
        let baseline = baseline_tensor(BaselinePolicy::ControlMean, shape, input, Some(profile))?;
        let shap = kernel_shap(model, input, shape, &baseline, &cfg.shap)?;
        cases.push(ErrorCase {
            index,
            window: meta,
            true_label: y,
            predicted,
            probability: p,
            shap,
            context: ErrorContext {
                seconds_since_attack_end: log.timeline.seconds_since_attack_end(meta.begin as f64),
                mean_vehicle_number: mean_vehicle_number(rows),
                control_percentiles: [25.0, 50.0, 75.0].map(|q| reference.percentile(q)),
            },
        });
    }
    cases.sort_by_key(|c| (c.window.begin, c.window.first_row, c.index));
    Ok(cases)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub transitional_data: usize,
    pub model_limitation: usize,
    pub uncategorized: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub index: usize,
    pub window: WindowMeta,
    pub true_label: u8,
    pub predicted: u8,
    pub probability: f64,
    pub category: Category,
    pub context: ErrorContext,
    pub shap_base_value: Option<f64>,
    pub top_features: Vec<AttributionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageReport {
    pub schema_version: u32,
    pub thresholds: Thresholds,
    pub low_traffic_threshold: f64,
    pub counts: CategoryCounts,
    pub cases: Vec<CaseReport>,
    pub narrative: String,
}

pub fn report(cases: &[ErrorCase], triager: &Triager) -> Result<TriageReport> {
    let mut counts = CategoryCounts::default();
    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        let category = triager.categorize(case)?;
        match category {
            Category::TransitionalData => counts.transitional_data += 1,
            Category::ModelLimitation => counts.model_limitation += 1,
            Category::Uncategorized => counts.uncategorized += 1,
        }
        let mut top_features = AttributionFile::from(&case.shap).entries;
        top_features.truncate(TOP_FEATURES);
        out.push(CaseReport {
            index: case.index,
            window: case.window,
            true_label: case.true_label,
            predicted: case.predicted,
            probability: case.probability,
            category,
            context: case.context.clone(),
            shap_base_value: case.shap.base_value,
            top_features,
        });
    }
    out.sort_by_key(|c| (c.window.begin, c.window.first_row, c.index));
    counts.total = out.len();
    let mut r = TriageReport {
        schema_version: REPORT_SCHEMA_VERSION,
        thresholds: triager.thresholds,
        low_traffic_threshold: triager.low_traffic_threshold(),
        counts,
        cases: out,
        narrative: String::new(),
    };
    r.narrative = narrative(&r);
    Ok(r)
}

fn narrative(r: &TriageReport) -> String {
    let c = &r.counts;
    if c.total == 0 {
        return "No misclassified windows.".into();
    }
    let mut s = format!(
        "{} misclassified window(s): {} transitional-data, {} model-limitation, {} uncategorized.",
        c.total, c.transitional_data, c.model_limitation, c.uncategorized
    );
    if c.transitional_data > 0 {
        let _ = write!(
            s,
            " Transitional-data errors are normal-labeled windows starting within {} s of an attack's end, \
             where queues built during the attack have not yet cleared.",
            r.thresholds.recover_seconds
        );
    }
    if c.model_limitation > 0 {
        let _ = write!(
            s,
            " Model-limitation errors are missed attacks while mean vehicle number stayed below {:.3} \
             (control percentile {}), so the attack left no congestion signature.",
            r.low_traffic_threshold, r.thresholds.low_traffic_percentile
        );
    }
    s
}

impl TriageReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Data(format!("unsupported triage report schema {}", r.schema_version)));
        }
        Ok(r)
    }

    pub fn render_text(&self) -> String {
        let mut s = format!("{}\n\n", self.narrative);
        if !self.cases.is_empty() {
            s.push_str("begin   end     truth   predicted  p(normal)  category           top SHAP features\n");
        }
        let name = |y: u8| if y == 1 { "NORMAL" } else { "HACKED" };
        for c in &self.cases {
            let cat = match c.category {
                Category::TransitionalData => "TRANSITIONAL_DATA",
                Category::ModelLimitation => "MODEL_LIMITATION",
                Category::Uncategorized => "UNCATEGORIZED",
            };
            let feats: Vec<String> = c.top_features.iter().map(|e| format!("{}({:+.3})", e.feature, e.score)).collect();
            let _ = writeln!(
                s,
                "{:<7} {:<7} {:<7} {:<10} {:<10.4} {:<18} {}",
                c.window.begin,
                c.window.end,
                name(c.true_label),
                name(c.predicted),
                c.probability,
                cat,
                feats.join(", ")
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::InputShape;
    use crate::simnet::{AttackEvent, AttackMode};
    use crate::xai::{Granularity, Method, AttributionMeta};

    fn case(begin: i64, truth: u8, pred: u8, f9: f64) -> ErrorCase {
        ErrorCase {
            index: begin as usize,
            window: WindowMeta { begin, end: begin + 10, first_row: 0 },
            true_label: truth,
            predicted: pred,
            probability: 0.5,
            shap: Attribution {
                method: Method::Shap,
                granularity: Granularity::Column,
                shape: InputShape::new(1, 18, 23),
                scores: (0..23).map(|j| (j, j as f64 * 0.01)).collect(),
                base_value: Some(0.5),
                prediction: 0.5,
                metadata: AttributionMeta {
                    n_samples: 0,
                    kernel_width: None,
                    seed: None,
                    baseline: "CONTROL_MEAN".into(),
                    r_squared: None,
                    warnings: vec![],
                },
            },
            context: ErrorContext { seconds_since_attack_end: None, mean_vehicle_number: f9, control_percentiles: [0.0; 3] },
        }
    }

    fn triager() -> Triager {
        Triager {
            thresholds: Thresholds::default(),
            timeline: Some(Timeline {
                duration: 7200,
                monitored: 4,
                attacks: vec![AttackEvent { start: 1800, end: 3600, target: 4, mode: AttackMode::AllRed }],
            }),
            reference: TrafficReference { window_means: (0..=100).map(f64::from).collect() },
        }
    }

    #[test]
    fn rules() {
        let t = triager();
        assert_eq!(t.low_traffic_threshold(), 25.0);
        assert_eq!(t.categorize(&case(3630, 1, 0, 50.0)).unwrap(), Category::TransitionalData);
        assert_eq!(t.categorize(&case(3720, 1, 0, 50.0)).unwrap(), Category::TransitionalData);
        assert_eq!(t.categorize(&case(3730, 1, 0, 50.0)).unwrap(), Category::Uncategorized);
        assert_eq!(t.categorize(&case(900, 1, 0, 50.0)).unwrap(), Category::Uncategorized);
        assert_eq!(t.categorize(&case(2000, 0, 1, 3.0)).unwrap(), Category::ModelLimitation);
        assert_eq!(t.categorize(&case(2000, 0, 1, 30.0)).unwrap(), Category::Uncategorized);
        let blind = Triager { timeline: None, ..t };
        assert!(blind.categorize(&case(3630, 1, 0, 50.0)).is_err());
    }

    #[test]
    fn report_counts_and_round_trip() {
        let t = triager();
        let empty = report(&[], &t).unwrap();
        assert_eq!(empty.counts, CategoryCounts::default());
        let r = report(&[case(3630, 1, 0, 50.0), case(2000, 0, 1, 3.0)], &t).unwrap();
        assert_eq!((r.counts.transitional_data, r.counts.model_limitation, r.counts.total), (1, 1, 2));
        assert_eq!(r.cases[0].window.begin, 2000);
        assert_eq!(r.cases[0].top_features.len(), 5);
        assert_eq!(r.cases[0].top_features[0].feature, crate::simnet::FEATURE_NAMES[22]);
        let back = TriageReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.render_text().contains("MODEL_LIMITATION"));
    }

    #[test]
    fn percentile_interpolates() {
        let r = TrafficReference { window_means: vec![1.0, 2.0, 3.0, 5.0] };
        assert_eq!(r.percentile(0.0), 1.0);
        assert_eq!(r.percentile(100.0), 5.0);
        assert!((r.percentile(25.0) - 1.75).abs() < 1e-12);
    }
}
