//! Deterministic signalized-grid simulator with attack injection and
//! lane-area detectors.

mod config;
mod detector;
mod network;
mod scenario;

pub use config::{Approach, AttackEvent, AttackMode, NetworkConfig, Phase, ProgramStep, UPDATE_PERIOD};
pub use detector::{
    check_record, feature, DetectorAccumulator, DetectorRecord, Label, LaneGeometry, ObservedVehicle, FEATURE_NAMES,
    N_FEATURES,
};
pub use network::{build_network, FlowCounters, LaneRef, LaneState, Network, SignalController, SimState, Vehicle};
pub use scenario::{
    csv_header, records_from_csv, records_to_csv, run_scenario, AttackSpec, RecordLog, RecordManifest, ScenarioConfig,
    Timeline,
};
