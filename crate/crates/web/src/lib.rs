//! WebAssembly bindings for the single-page demo in `www/`.
//!
//! The page simulates a scenario once, then asks for the per-interval
//! congestion series, individual normalized windows, and a PCA scatter of
//! all windows. Everything crosses the boundary as JSON or `Float64Array`.

use serde::Serialize;
use sigwatch::dataset::{fit_minmax, window_stream, NormalizationStats};
use sigwatch::simnet::{feature, AttackMode, AttackSpec, NetworkConfig, RecordLog, ScenarioConfig};
use sigwatch::xai::{pca_fit, pca_project};
use wasm_bindgen::prelude::*;

fn js_err(e: sigwatch::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Serialize)]
struct Series {
    time: Vec<u64>,
    jam_meters: Vec<f64>,
    max_halt: Vec<f64>,
    hacked: Vec<u8>,
    monitored: usize,
    detectors: usize,
}

#[derive(Serialize)]
struct Scatter {
    x: Vec<f64>,
    y: Vec<f64>,
    label: Vec<u8>,
    ratio: Vec<f64>,
}

/// One simulated run plus min–max statistics fitted on it.
#[wasm_bindgen]
pub struct Demo {
    log: RecordLog,
    stats: NormalizationStats,
}

#[wasm_bindgen]
impl Demo {
    /// Simulate `duration` seconds (multiple of 10) with an attack over
    /// `[attack_start, attack_end)`; an empty interval means no attack.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, arrival_rate: f64, duration: u64, attack_start: u64, attack_end: u64) -> Result<Demo, JsError> {
        let attacks = if attack_end > attack_start {
            vec![AttackSpec { start: attack_start, end: attack_end, target: None, mode: AttackMode::RandomEachUpdate }]
        } else {
            Vec::new()
        };
        let sc = ScenarioConfig {
            duration,
            control_duration: 600,
            network: NetworkConfig { default_arrival_rate: arrival_rate, seed, ..Default::default() },
            attacks,
        };
        let log = sc.run().map_err(js_err)?;
        let stats = fit_minmax(log.records.iter().map(|r| &r.features)).map_err(js_err)?;
        Ok(Demo { log, stats })
    }

    /// JSON: per-interval total jam distance and longest halt over all
    /// detectors, with the interval label.
    pub fn series(&self) -> Result<String, JsError> {
        let d = self.log.detectors();
        let mut s = Series {
            time: Vec::new(),
            jam_meters: Vec::new(),
            max_halt: Vec::new(),
            hacked: Vec::new(),
            monitored: self.log.timeline.monitored,
            detectors: d,
        };
        for batch in self.log.records.chunks_exact(d) {
            s.time.push(batch[0].begin);
            s.jam_meters.push(batch.iter().map(|r| r.features[feature::JAM_METERS_SUM]).sum());
            s.max_halt.push(batch.iter().map(|r| r.features[feature::MAX_HALTING_DURATION]).fold(0.0, f64::max));
            s.hacked.push(u8::from(batch[0].label.target() == 0));
        }
        serde_json::to_string(&s).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn window_count(&self, rows: usize) -> usize {
        self.log.records.len() / rows.max(1)
    }

    /// Row-major `rows × 23` normalized window, followed by its target
    /// (1 = normal, 0 = hacked) as the last element.
    pub fn window(&self, rows: usize, index: usize) -> Result<Vec<f64>, JsError> {
        let windows = window_stream(&self.log.records, rows, &self.stats).map_err(js_err)?;
        let w = windows.get(index).ok_or_else(|| JsError::new("window index out of range"))?;
        let mut v = w.values.clone();
        v.push(f64::from(w.target()));
        Ok(v)
    }

    /// JSON: first two principal coordinates of every window, labels and
    /// explained-variance ratios.
    pub fn pca(&self, rows: usize) -> Result<String, JsError> {
        let windows = window_stream(&self.log.records, rows, &self.stats).map_err(js_err)?;
        let data: Vec<Vec<f64>> = windows.iter().map(|w| w.values.clone()).collect();
        let model = pca_fit(&data).map_err(js_err)?;
        let proj = pca_project(&model, &data, Some(2), 0.9).map_err(js_err)?;
        let s = Scatter {
            x: proj.plot.iter().map(|p| p[0]).collect(),
            y: proj.plot.iter().map(|p| p[1]).collect(),
            label: windows.iter().map(|w| w.target()).collect(),
            ratio: model.explained_variance_ratio.iter().take(10).copied().collect(),
        };
        serde_json::to_string(&s).map_err(|e| JsError::new(&e.to_string()))
    }
}
