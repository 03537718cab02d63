//! Full scenario runs and record-log persistence.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{AttackEvent, AttackMode, NetworkConfig, UPDATE_PERIOD};
use super::detector::{DetectorRecord, Label, FEATURE_NAMES, N_FEATURES};
use super::network::{build_network, SimState};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};

/// Attack intervals of a run, kept next to its records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub duration: u64,
    pub monitored: usize,
    pub attacks: Vec<AttackEvent>,
}

impl Timeline {
    /// Whether `[begin, end)` overlaps an attack on the monitored intersection.
    pub fn is_attacked(&self, begin: u64, end: u64) -> bool {
        self.attacks
            .iter()
            .any(|a| a.target == self.monitored && a.overlaps(begin, end))
    }

    /// Seconds from the most recent monitored attack end at or before `t`.
    pub fn seconds_since_attack_end(&self, t: f64) -> Option<f64> {
        self.attacks
            .iter()
            .filter(|a| a.target == self.monitored && (a.end as f64) <= t)
            .map(|a| t - a.end as f64)
            .fold(None, |best: Option<f64>, d| Some(best.map_or(d, |b| b.min(d))))
    }
}

/// Ordered detector records of the monitored intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordLog {
    pub seed: u64,
    pub config_digest: String,
    pub detector_ids: Vec<String>,
    pub timeline: Timeline,
    pub records: Vec<DetectorRecord>,
}

impl RecordLog {
    pub fn detectors(&self) -> usize {
        self.detector_ids.len()
    }
}

/// Attack as written in a scenario file; a missing target means the busiest intersection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub start: u64,
    pub end: u64,
    #[serde(default)]
    pub target: Option<usize>,
    #[serde(default = "default_mode")]
    pub mode: AttackMode,
}

fn default_mode() -> AttackMode {
    AttackMode::RandomEachUpdate
}

/// Scenario file: network, attacks, run length and the attack-free control run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration: u64,
    #[serde(default = "default_control_duration")]
    pub control_duration: u64,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
}

fn default_control_duration() -> u64 {
    3600
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Resolve attack targets against the built network.
    pub fn attack_events(&self) -> Result<Vec<AttackEvent>> {
        let busiest = build_network(&self.network)?.busiest_intersection();
        Ok(self
            .attacks
            .iter()
            .map(|a| AttackEvent {
                start: a.start,
                end: a.end,
                target: a.target.unwrap_or(busiest),
                mode: a.mode,
            })
            .collect())
    }

    /// Seed used for the control run: the scenario seed on a disjoint key.
    pub fn control_seed(&self) -> u64 {
        self.network.seed ^ 0x5eed_c0de_0000_0001
    }

    pub fn run(&self) -> Result<RecordLog> {
        run_scenario(&self.network, &self.attack_events()?, self.duration)
    }

    pub fn run_control(&self) -> Result<RecordLog> {
        let cfg = NetworkConfig {
            seed: self.control_seed(),
            ..self.network.clone()
        };
        run_scenario(&cfg, &[], self.control_duration)
    }
}

/// Simulate `duration` seconds and return the monitored intersection's records.
pub fn run_scenario(config: &NetworkConfig, attacks: &[AttackEvent], duration: u64) -> Result<RecordLog> {
    if duration == 0 || duration % UPDATE_PERIOD != 0 {
        return Err(Error::Config(format!(
            "duration must be a positive multiple of {UPDATE_PERIOD} s, got {duration}"
        )));
    }
    let network = build_network(config)?;
    let monitored = network.busiest_intersection();
    let lanes: Vec<usize> = network.incoming_lanes(monitored).collect();
    let detector_ids = lanes.iter().map(|&l| network.detector_id(l)).collect();
    let mut state = SimState::new(network);
    state.apply_attacks(attacks)?;
    state.monitor(lanes);

    let timeline = Timeline {
        duration,
        monitored,
        attacks: attacks.to_vec(),
    };
    let mut records = Vec::with_capacity((duration / UPDATE_PERIOD) as usize * config.lanes_at_intersection());
    while state.clock() < duration {
        state.step();
        if state.clock() % UPDATE_PERIOD == 0 {
            for mut r in state.sample_detectors(state.clock())? {
                if timeline.is_attacked(r.begin, r.end) {
                    r.label = Label::Hacked;
                }
                records.push(r);
            }
        }
    }
    Ok(RecordLog {
        seed: config.seed,
        config_digest: config.digest(),
        detector_ids,
        timeline,
        records,
    })
}

/// CSV header of record files.
pub fn csv_header() -> String {
    let mut h = String::from("begin,end,id,target");
    for i in 1..=N_FEATURES {
        let _ = write!(h, ",F{i}");
    }
    h
}

pub fn records_to_csv(records: &[DetectorRecord]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{},{}", r.begin, r.end, r.detector_id, r.label.target());
        for v in &r.features {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn records_from_csv(text: &str, path: &Path) -> Result<Vec<DetectorRecord>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(path, "empty file"))?;
    if header.trim_end() != csv_header() {
        return Err(Error::format(path, "unexpected header"));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", n + 2));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 + N_FEATURES {
            return Err(bad("wrong column count"));
        }
        let begin = cols[0].parse().map_err(|_| bad("bad begin"))?;
        let end = cols[1].parse().map_err(|_| bad("bad end"))?;
        let label = cols[3]
            .parse::<u8>()
            .ok()
            .and_then(Label::from_target)
            .ok_or_else(|| bad("bad target"))?;
        let mut features = [0.0; N_FEATURES];
        for (f, c) in features.iter_mut().zip(&cols[4..]) {
            *f = c.parse().map_err(|_| bad("bad feature value"))?;
        }
        out.push(DetectorRecord {
            begin,
            end,
            detector_id: cols[2].to_string(),
            label,
            features,
        });
    }
    Ok(out)
}

/// JSON sidecar describing a record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordManifest {
    pub seed: u64,
    pub config_digest: String,
    pub records_digest: String,
    pub detector_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub timeline: Timeline,
}

impl RecordLog {
    /// Write `<stem>.csv` and `<stem>.manifest.json` under `dir`; returns the CSV digest.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<String> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = records_to_csv(&self.records);
        let digest = sha256_hex(csv.as_bytes());
        let csv_path = dir.join(format!("{stem}.csv"));
        fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
        let manifest = RecordManifest {
            seed: self.seed,
            config_digest: self.config_digest.clone(),
            records_digest: digest.clone(),
            detector_ids: self.detector_ids.clone(),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            timeline: self.timeline.clone(),
        };
        let mpath = dir.join(format!("{stem}.manifest.json"));
        fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
        Ok(digest)
    }

    /// Load a record log, verifying the CSV against the manifest digest.
    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let mpath = dir.join(format!("{stem}.manifest.json"));
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: RecordManifest = serde_json::from_str(&text)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let csv = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let found = sha256_hex(csv.as_bytes());
        if found != manifest.records_digest {
            return Err(Error::DigestMismatch {
                expected: manifest.records_digest,
                found,
                context: csv_path.display().to_string(),
            });
        }
        Ok(Self {
            seed: manifest.seed,
            config_digest: manifest.config_digest,
            detector_ids: manifest.detector_ids,
            timeline: manifest.timeline,
            records: records_from_csv(&csv, &csv_path)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig {
            grid_rows: 2,
            grid_cols: 2,
            default_arrival_rate: 0.3,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn counts_one_record_per_detector_per_interval() {
        let log = run_scenario(&small(), &[], 100).unwrap();
        assert_eq!(log.records.len(), 180);
        assert!(log.records.iter().all(|r| r.label == Label::Normal));
        assert_eq!(log.records[0].detector_id, "J0_N0");
        assert_eq!(log.records[17].detector_id, "J0_W3");
    }

    #[test]
    fn rejects_unaligned_duration() {
        assert!(run_scenario(&small(), &[], 95).is_err());
    }

    #[test]
    fn labels_follow_the_timeline() {
        let attack = AttackEvent {
            start: 200,
            end: 400,
            target: 0,
            mode: AttackMode::RandomEachUpdate,
        };
        let log = run_scenario(&small(), &[attack], 600).unwrap();
        for r in &log.records {
            let expect = if r.begin >= 200 && r.end <= 400 {
                Label::Hacked
            } else {
                Label::Normal
            };
            assert_eq!(r.label, expect);
        }
    }

    #[test]
    fn attacks_elsewhere_do_not_label() {
        let attack = AttackEvent {
            start: 0,
            end: 100,
            target: 3,
            mode: AttackMode::AllRed,
        };
        let log = run_scenario(&small(), &[attack], 100).unwrap();
        assert!(log.records.iter().all(|r| r.label == Label::Normal));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let log = run_scenario(&small(), &[], 200).unwrap();
        log.save(dir.path(), "records").unwrap();
        let back = RecordLog::load(dir.path(), "records").unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn tampered_csv_fails_digest() {
        let dir = tempfile::tempdir().unwrap();
        let log = run_scenario(&small(), &[], 50).unwrap();
        log.save(dir.path(), "r").unwrap();
        let p = dir.path().join("r.csv");
        let text = fs::read_to_string(&p).unwrap().replacen("J0_N0", "J0_N9", 1);
        fs::write(&p, text).unwrap();
        assert!(matches!(RecordLog::load(dir.path(), "r"), Err(Error::DigestMismatch { .. })));
    }

    #[test]
    fn scenario_toml_parses() {
        let cfg = ScenarioConfig::from_toml(
            r#"
            duration = 7200
            [network]
            grid_rows = 2
            grid_cols = 2
            seed = 4
            [network.arrival_rates]
            "3.N" = 0.9
            [[attacks]]
            start = 3600
            end = 7200
            "#,
        )
        .unwrap();
        let events = cfg.attack_events().unwrap();
        assert_eq!(events[0].target, 3);
        assert_eq!(events[0].mode, AttackMode::RandomEachUpdate);
        assert_eq!(cfg.control_duration, 3600);
        assert!(ScenarioConfig::from_toml("duration = 10\nbogus = 1").is_err());
    }

    #[test]
    fn time_since_attack_end() {
        let t = Timeline {
            duration: 1000,
            monitored: 0,
            attacks: vec![AttackEvent {
                start: 100,
                end: 300,
                target: 0,
                mode: AttackMode::AllRed,
            }],
        };
        assert_eq!(t.seconds_since_attack_end(250.0), None);
        assert_eq!(t.seconds_since_attack_end(330.0), Some(30.0));
    }
}
