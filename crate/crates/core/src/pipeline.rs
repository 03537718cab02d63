//! Stage orchestration shared by the command-line tool and the test suites.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    check_window_rows, fit_minmax, layered_tensor, smote_indexed, split_indices, window_from_span, window_spans,
    ClassCounts, ControlProfile, DatasetManifest, NormalizationStats, WindowMeta, WindowSet, DEFAULT_SPLIT_RATIO,
    SMOTE_K,
};
use crate::digest::{digest_f64s, sha256_hex};
use crate::error::{Error, Result};
use crate::neuralnet::{
    evaluate, model_from_bytes, predict_all, predict_label, save_model, train, CnnModel, InputShape, Metrics,
    TrainConfig, TrainReport,
};
use crate::simnet::{records_to_csv, AttackEvent, RecordLog, ScenarioConfig, N_FEATURES};
use crate::triage::{collect_errors, report, TrafficReference, TriageConfig, TriageReport, Triager};
use crate::xai::{
    attribution_json, baseline_tensor, heatmap_csv, kernel_shap, lime_explain, occlusion_map, pca_fit, pca_project,
    pca_scatter_csv, BaselinePolicy, LimeConfig, OcclusionConfig, ShapConfig, DEFAULT_VARIANCE_TARGET,
};

/// Single window matrix or window stacked with control mean/std layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TensorMode {
    Single,
    ThreeLayer,
}

impl TensorMode {
    pub fn channels(self) -> usize {
        match self {
            TensorMode::Single => 1,
            TensorMode::ThreeLayer => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub rows: usize,
    pub mode: TensorMode,
    pub split_ratio: f64,
    pub smote_k: usize,
    pub smote: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            rows: 18,
            mode: TensorMode::Single,
            split_ratio: DEFAULT_SPLIT_RATIO,
            smote_k: SMOTE_K,
            smote: true,
        }
    }
}

/// Everything the dataset stage produces.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltDataset {
    pub train: WindowSet,
    pub test: WindowSet,
    pub stats: NormalizationStats,
    pub profile: ControlProfile,
    pub train_manifest: DatasetManifest,
    pub test_manifest: DatasetManifest,
}

impl BuiltDataset {
    pub fn shape(&self) -> InputShape {
        self.train.shape
    }
}

/// Window, split, normalize (fitted on training rows), optionally stack
/// control layers, and rebalance the training split with SMOTE.
pub fn build_dataset(log: &RecordLog, control: &RecordLog, cfg: &DatasetConfig, seed: u64) -> Result<BuiltDataset> {
    check_window_rows(cfg.rows)?;
    if log.detectors() == 0 || log.detectors() != control.detectors() {
        return Err(Error::Data(format!(
            "scenario has {} detectors but control run has {}",
            log.detectors(),
            control.detectors()
        )));
    }
    let spans = window_spans(&log.records, cfg.rows);
    let (train_idx, test_idx) = split_indices(spans.len(), cfg.split_ratio, seed)?;

    let train_rows = train_idx
        .iter()
        .flat_map(|&i| &log.records[spans[i].first_row..spans[i].first_row + cfg.rows])
        .map(|r| &r.features);
    let stats = fit_minmax(train_rows)?;
    let profile = ControlProfile::fit(&control.records, control.detectors(), &stats)?;
    let shape = InputShape::new(cfg.mode.channels(), cfg.rows, N_FEATURES);

    let sample = |i: usize| -> (Vec<f64>, u8, WindowMeta) {
        let w = window_from_span(&log.records, &spans[i], &stats);
        let meta = WindowMeta {
            begin: w.window_begin as i64,
            end: w.window_end as i64,
            first_row: w.first_row as i64,
        };
        let values = match cfg.mode {
            TensorMode::Single => w.values.clone(),
            TensorMode::ThreeLayer => layered_tensor(&w, &profile).values,
        };
        (values, w.target(), meta)
    };

    let mut test = WindowSet::new(shape);
    for &i in &test_idx {
        let (x, y, m) = sample(i);
        test.push(x, y, m);
    }
    let (mut xs, mut ys, mut metas) = (Vec::new(), Vec::new(), Vec::new());
    for &i in &train_idx {
        let (x, y, m) = sample(i);
        xs.push(x);
        ys.push(y);
        metas.push(m);
    }
    let mut train = WindowSet::new(shape);
    let classes_present = ys.contains(&0) && ys.contains(&1);
    let smote_applied = cfg.smote && classes_present;
    if smote_applied {
        let (bx, by, origin) = smote_indexed(&xs, &ys, cfg.smote_k, seed)?;
        for ((x, y), o) in bx.into_iter().zip(by).zip(origin) {
            train.push(x, y, o.map_or(WindowMeta::SYNTHETIC, |i| metas[i]));
        }
    } else {
        for ((x, y), m) in xs.into_iter().zip(ys).zip(metas) {
            train.push(x, y, m);
        }
    }

    let records_digest = sha256_hex(records_to_csv(&log.records).as_bytes());
    let manifest = |set: &WindowSet, split: &str, smote_applied: bool| {
        let (normal, hacked) = set.class_counts();
        DatasetManifest {
            rows: cfg.rows,
            channels: shape.channels,
            split: split.to_string(),
            seed,
            smote_applied,
            counts: ClassCounts { normal, hacked },
            stats_digest: stats.digest(),
            records_digest: records_digest.clone(),
            data_digest: sha256_hex(&set.to_bytes()),
        }
    };
    Ok(BuiltDataset {
        train_manifest: manifest(&train, "train", smote_applied),
        test_manifest: manifest(&test, "test", false),
        train,
        test,
        stats,
        profile,
    })
}

// ---------------------------------------------------------------------------
// Run configuration and on-disk stages

/// Training hyper-parameters as written in a run file; the seed comes from
/// the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self { epochs: d.epochs, batch_size: d.batch_size, learning_rate: d.learning_rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XaiSettings {
    pub occlusion: OcclusionConfig,
    pub lime: LimeConfig,
    pub shap: ShapConfig,
    /// Baseline for LIME masks.
    pub lime_baseline: BaselinePolicy,
    pub pca_variance_target: f64,
}

impl Default for XaiSettings {
    fn default() -> Self {
        Self {
            occlusion: OcclusionConfig::default(),
            lime: LimeConfig::default(),
            shap: ShapConfig::default(),
            lime_baseline: BaselinePolicy::Zero,
            pca_variance_target: DEFAULT_VARIANCE_TARGET,
        }
    }
}

/// Run file. Stochastic stages draw every seed from `seed`; the scenario's
/// own network seed drives the simulation unless a seed override is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Required by every stochastic stage.
    pub seed: Option<u64>,
    /// Scenario file, relative to the run file.
    pub scenario: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub train: TrainSettings,
    pub xai: XaiSettings,
    pub triage: TriageConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            scenario: None,
            out: None,
            dataset: DatasetConfig::default(),
            train: TrainSettings::default(),
            xai: XaiSettings::default(),
            triage: TriageConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a run file; a relative `scenario` path is resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(s), Some(dir)) = (cfg.scenario.as_mut(), path.parent()) {
            if s.is_relative() {
                *s = dir.join(&*s);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_window_rows(self.dataset.rows)?;
        if !(self.dataset.split_ratio > 0.0 && self.dataset.split_ratio < 1.0) {
            return Err(Error::Config(format!("split_ratio must be in (0, 1), got {}", self.dataset.split_ratio)));
        }
        if self.dataset.smote_k == 0 {
            return Err(Error::Config("smote_k must be positive".into()));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 || !(self.train.learning_rate > 0.0) {
            return Err(Error::Config("epochs, batch_size and learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("a seed is required (set `seed` in the run file or pass one)".into()))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            seed: self.seed()?,
        })
    }

    /// Short label for metric tables, e.g. `R=18 SINGLE`.
    pub fn configuration_name(&self) -> String {
        let mode = match self.dataset.mode {
            TensorMode::Single => "SINGLE",
            TensorMode::ThreeLayer => "THREE_LAYER",
        };
        format!("R={} {mode}", self.dataset.rows)
    }
}

/// Fixed artifact locations under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub const RECORDS: &'static str = "records";
    pub const CONTROL: &'static str = "control";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn train_set(&self) -> PathBuf {
        self.root.join("train.swds")
    }
    pub fn test_set(&self) -> PathBuf {
        self.root.join("test.swds")
    }
    pub fn dataset_manifest(&self) -> PathBuf {
        self.root.join("dataset.json")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.swcn")
    }
    pub fn model_manifest(&self) -> PathBuf {
        self.root.join("model.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }
    pub fn explain_dir(&self) -> PathBuf {
        self.root.join("explain")
    }
    pub fn triage_json(&self) -> PathBuf {
        self.root.join("triage.json")
    }
    pub fn triage_text(&self) -> PathBuf {
        self.root.join("triage.txt")
    }
    pub fn pca_csv(&self) -> PathBuf {
        self.root.join("pca.csv")
    }
    pub fn pca_json(&self) -> PathBuf {
        self.root.join("pca.json")
    }
    pub fn run_manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }
}

/// Digest of every artifact written so far, keyed by path relative to the
/// output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: Option<u64>,
    pub artifacts: BTreeMap<String, String>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<String> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(bytes))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn expect_digest(expected: &str, found: &str, context: &Path) -> Result<()> {
    if expected != found {
        return Err(Error::DigestMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
            context: context.display().to_string(),
        });
    }
    Ok(())
}

impl Layout {
    /// Record artifacts (path relative to root → digest) in the run manifest.
    pub fn record(&self, seed: Option<u64>, entries: &[(PathBuf, String)]) -> Result<()> {
        let path = self.run_manifest();
        let mut m: RunManifest = if path.exists() { read_json(&path)? } else { RunManifest::default() };
        if seed.is_some() {
            m.seed = seed;
        }
        for (p, d) in entries {
            let rel = p.strip_prefix(&self.root).unwrap_or(p);
            m.artifacts.insert(rel.to_string_lossy().replace('\\', "/"), d.clone());
        }
        write_file(&path, &json_bytes(&m)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub records: usize,
    pub control_records: usize,
    pub detectors: usize,
    pub monitored: usize,
    pub attacks: Vec<AttackEvent>,
    pub records_digest: String,
    pub control_digest: String,
}

/// Run the scenario and its attack-free control run.
pub fn stage_simulate(scenario: &ScenarioConfig, layout: &Layout, seed: u64) -> Result<SimulateSummary> {
    let log = scenario.run()?;
    let control = scenario.run_control()?;
    let records_digest = log.save(&layout.root, Layout::RECORDS)?;
    let control_digest = control.save(&layout.root, Layout::CONTROL)?;
    let manifest_digest = |stem: &str| -> Result<(PathBuf, String)> {
        let p = layout.root.join(format!("{stem}.manifest.json"));
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        Ok((p, sha256_hex(&bytes)))
    };
    layout.record(
        Some(seed),
        &[
            (layout.root.join("records.csv"), records_digest.clone()),
            manifest_digest(Layout::RECORDS)?,
            (layout.root.join("control.csv"), control_digest.clone()),
            manifest_digest(Layout::CONTROL)?,
        ],
    )?;
    Ok(SimulateSummary {
        records: log.records.len(),
        control_records: control.records.len(),
        detectors: log.detectors(),
        monitored: log.timeline.monitored,
        attacks: log.timeline.attacks.clone(),
        records_digest,
        control_digest,
    })
}

/// `dataset.json`: what the dataset stage consumed and produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub config: DatasetConfig,
    pub seed: u64,
    pub records_digest: String,
    pub control_digest: String,
    pub stats: NormalizationStats,
    pub profile: ControlProfile,
    pub train: DatasetManifest,
    pub test: DatasetManifest,
}

pub fn stage_dataset(cfg: &RunConfig, layout: &Layout) -> Result<DatasetBundle> {
    let log = RecordLog::load(&layout.root, Layout::RECORDS)?;
    let control = RecordLog::load(&layout.root, Layout::CONTROL)?;
    let seed = cfg.seed()?;
    let built = build_dataset(&log, &control, &cfg.dataset, seed)?;
    let train_digest = built.train.save(&layout.train_set())?;
    let test_digest = built.test.save(&layout.test_set())?;
    let bundle = DatasetBundle {
        config: cfg.dataset,
        seed,
        records_digest: built.train_manifest.records_digest.clone(),
        control_digest: sha256_hex(records_to_csv(&control.records).as_bytes()),
        stats: built.stats,
        profile: built.profile,
        train: built.train_manifest,
        test: built.test_manifest,
    };
    let bundle_digest = write_file(&layout.dataset_manifest(), &json_bytes(&bundle)?)?;
    layout.record(
        Some(seed),
        &[
            (layout.train_set(), train_digest),
            (layout.test_set(), test_digest),
            (layout.dataset_manifest(), bundle_digest),
        ],
    )?;
    Ok(bundle)
}

/// Load the dataset manifest and one split, refusing files whose digest
/// differs from the manifest.
pub fn load_split(layout: &Layout, test: bool) -> Result<(DatasetBundle, WindowSet)> {
    let bundle: DatasetBundle = read_json(&layout.dataset_manifest())?;
    let (path, manifest) = if test { (layout.test_set(), &bundle.test) } else { (layout.train_set(), &bundle.train) };
    let (set, digest) = WindowSet::load(&path)?;
    expect_digest(&manifest.data_digest, &digest, &path)?;
    Ok((bundle, set))
}

/// `model.json`: provenance of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub shape: InputShape,
    pub parameters: usize,
    pub train: TrainConfig,
    pub report: TrainReport,
    pub train_data_digest: String,
    pub stats_digest: String,
    pub model_digest: String,
}

pub fn stage_train(cfg: &RunConfig, layout: &Layout) -> Result<ModelManifest> {
    let (bundle, set) = load_split(layout, false)?;
    let tc = cfg.train_config()?;
    let mut model = CnnModel::new(set.shape, tc.seed)?;
    model.stats_digest = bundle.stats.digest();
    let report = train(&mut model, &set.inputs, &set.labels, &tc)?;
    let model_digest = save_model(&model, None, &layout.model())?;
    let manifest = ModelManifest {
        shape: set.shape,
        parameters: model.parameter_count(),
        train: tc,
        report,
        train_data_digest: bundle.train.data_digest.clone(),
        stats_digest: model.stats_digest.clone(),
        model_digest: model_digest.clone(),
    };
    let md = write_file(&layout.model_manifest(), &json_bytes(&manifest)?)?;
    layout.record(cfg.seed, &[(layout.model(), model_digest), (layout.model_manifest(), md)])?;
    Ok(manifest)
}

/// Load the model and test split, checking that both descend from the same
/// dataset build.
pub fn load_model_and_test(layout: &Layout) -> Result<(CnnModel, DatasetBundle, WindowSet)> {
    let manifest: ModelManifest = read_json(&layout.model_manifest())?;
    let path = layout.model();
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    expect_digest(&manifest.model_digest, &sha256_hex(&bytes), &path)?;
    let (model, _) = model_from_bytes(&bytes, &path)?;
    let (bundle, test) = load_split(layout, true)?;
    expect_digest(&bundle.train.data_digest, &manifest.train_data_digest, &layout.dataset_manifest())?;
    if let Some(w) = model.normalization_warning(&bundle.stats.digest()) {
        return Err(Error::DigestMismatch {
            expected: bundle.stats.digest(),
            found: model.stats_digest.clone(),
            context: format!("{}: {w}", path.display()),
        });
    }
    if model.input_shape() != test.shape {
        return Err(Error::Shape(format!("model expects {} but test set is {}", model.input_shape(), test.shape)));
    }
    Ok((model, bundle, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub configuration: String,
    pub metrics: Metrics,
    pub model_digest: String,
    pub test_digest: String,
    pub probabilities_digest: String,
}

pub fn stage_eval(cfg: &RunConfig, layout: &Layout) -> Result<MetricsFile> {
    let (model, bundle, test) = load_model_and_test(layout)?;
    let (metrics, probs) = evaluate(&model, &test.inputs, &test.labels, cfg.triage.decision_threshold)?;
    let model_manifest: ModelManifest = read_json(&layout.model_manifest())?;
    let file = MetricsFile {
        configuration: cfg.configuration_name(),
        metrics,
        model_digest: model_manifest.model_digest,
        test_digest: bundle.test.data_digest,
        probabilities_digest: digest_f64s(&probs),
    };
    let d = write_file(&layout.metrics(), &json_bytes(&file)?)?;
    layout.record(cfg.seed, &[(layout.metrics(), d)])?;
    Ok(file)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainMethod {
    Occlusion,
    Lime,
    Shap,
}

impl std::str::FromStr for ExplainMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "occlusion" => Ok(Self::Occlusion),
            "lime" => Ok(Self::Lime),
            "shap" => Ok(Self::Shap),
            other => Err(Error::Config(format!("unknown explanation method '{other}' (occlusion|lime|shap)"))),
        }
    }
}

/// Which test samples to explain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleSelector {
    Indices(Vec<usize>),
    Misclassified,
    All,
}

impl std::str::FromStr for SampleSelector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "misclassified" => Ok(Self::Misclassified),
            "all" => Ok(Self::All),
            list => list
                .split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Self::Indices)
                .map_err(|_| Error::Config(format!("bad sample selector '{list}' (indices, 'misclassified' or 'all')"))),
        }
    }
}

/// Explain selected test samples; returns the files written.
pub fn stage_explain(
    cfg: &RunConfig,
    layout: &Layout,
    method: ExplainMethod,
    selector: &SampleSelector,
) -> Result<Vec<PathBuf>> {
    let (model, bundle, test) = load_model_and_test(layout)?;
    let shape = test.shape;
    let picks: Vec<usize> = match selector {
        SampleSelector::All => (0..test.len()).collect(),
        SampleSelector::Indices(v) => {
            if let Some(&bad) = v.iter().find(|&&i| i >= test.len()) {
                return Err(Error::Config(format!("sample {bad} out of range (test set has {})", test.len())));
            }
            v.clone()
        }
        SampleSelector::Misclassified => {
            let probs = predict_all(&model, &test.inputs)?;
            probs
                .iter()
                .zip(&test.labels)
                .enumerate()
                .filter(|(_, (&p, &y))| predict_label(p, cfg.triage.decision_threshold) != y)
                .map(|(i, _)| i)
                .collect()
        }
    };
    let dir = layout.explain_dir();
    let mut written = Vec::new();
    let mut entries = Vec::new();
    for i in picks {
        let x = &test.inputs[i];
        let (name, bytes) = match method {
            ExplainMethod::Occlusion => {
                let base = baseline_tensor(cfg.xai.occlusion.baseline, shape, x, Some(&bundle.profile))?;
                let a = occlusion_map(&model, x, shape, &base, &cfg.xai.occlusion)?;
                let meta_path = dir.join(format!("occlusion_{i}.json"));
                let md = write_file(&meta_path, attribution_json(&a)?.as_bytes())?;
                entries.push((meta_path.clone(), md));
                written.push(meta_path);
                (format!("occlusion_{i}.csv"), heatmap_csv(&a)?.into_bytes())
            }
            ExplainMethod::Lime => {
                let base = baseline_tensor(cfg.xai.lime_baseline, shape, x, Some(&bundle.profile))?;
                let lc = LimeConfig { seed: cfg.seed()?, baseline: cfg.xai.lime_baseline.name().into(), ..cfg.xai.lime.clone() };
                let a = lime_explain(&model, x, shape, &base, &lc)?;
                (format!("lime_{i}.json"), attribution_json(&a)?.into_bytes())
            }
            ExplainMethod::Shap => {
                let base = baseline_tensor(BaselinePolicy::ControlMean, shape, x, Some(&bundle.profile))?;
                let sc = ShapConfig { seed: cfg.seed()?, ..cfg.xai.shap.clone() };
                let a = kernel_shap(&model, x, shape, &base, &sc)?;
                (format!("shap_{i}.json"), attribution_json(&a)?.into_bytes())
            }
        };
        let path = dir.join(name);
        let d = write_file(&path, &bytes)?;
        entries.push((path.clone(), d));
        written.push(path);
    }
    layout.record(cfg.seed, &entries)?;
    Ok(written)
}

pub fn stage_triage(cfg: &RunConfig, layout: &Layout) -> Result<TriageReport> {
    let (model, bundle, test) = load_model_and_test(layout)?;
    let log = RecordLog::load(&layout.root, Layout::RECORDS)?;
    let control = RecordLog::load(&layout.root, Layout::CONTROL)?;
    expect_digest(&bundle.records_digest, &sha256_hex(records_to_csv(&log.records).as_bytes()), &layout.root.join("records.csv"))?;
    let reference = TrafficReference::from_control(&control.records, test.shape.rows)?;
    let tc = TriageConfig { shap: ShapConfig { seed: cfg.seed()?, ..cfg.triage.shap.clone() }, ..cfg.triage.clone() };
    let cases = collect_errors(&model, &test, &log, &bundle.profile, &reference, &tc)?;
    let triager = Triager { thresholds: tc.thresholds, timeline: Some(log.timeline.clone()), reference };
    let r = report(&cases, &triager)?;
    let dj = write_file(&layout.triage_json(), r.to_json()?.as_bytes())?;
    let dt = write_file(&layout.triage_text(), r.render_text().as_bytes())?;
    layout.record(cfg.seed, &[(layout.triage_json(), dj), (layout.triage_text(), dt)])?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub samples: usize,
    pub dim: usize,
    pub variance_target: f64,
    pub k: usize,
    pub explained_variance_ratio: Vec<f64>,
    pub class_counts: ClassCounts,
}

/// PCA over the window channel of every real (non-synthetic) sample.
pub fn stage_pca(cfg: &RunConfig, layout: &Layout) -> Result<PcaSummary> {
    let (_, train_set) = load_split(layout, false)?;
    let (_, test_set) = load_split(layout, true)?;
    let plane = train_set.shape.plane();
    let (mut rows, mut labels) = (Vec::new(), Vec::new());
    for set in [&train_set, &test_set] {
        for ((x, &y), m) in set.inputs.iter().zip(&set.labels).zip(&set.meta) {
            if !m.is_synthetic() {
                rows.push(x[..plane].to_vec());
                labels.push(y);
            }
        }
    }
    let model = pca_fit(&rows)?;
    let target = cfg.xai.pca_variance_target;
    let proj = pca_project(&model, &rows, None, target)?;
    let normal = labels.iter().filter(|&&y| y == 1).count();
    let summary = PcaSummary {
        samples: rows.len(),
        dim: plane,
        variance_target: target,
        k: proj.k,
        explained_variance_ratio: model.explained_variance_ratio.clone(),
        class_counts: ClassCounts { normal, hacked: labels.len() - normal },
    };
    let dc = write_file(&layout.pca_csv(), pca_scatter_csv(&proj.plot, &labels)?.as_bytes())?;
    let dj = write_file(&layout.pca_json(), &json_bytes(&summary)?)?;
    layout.record(cfg.seed, &[(layout.pca_csv(), dc), (layout.pca_json(), dj)])?;
    Ok(summary)
}
