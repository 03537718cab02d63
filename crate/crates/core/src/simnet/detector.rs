//! Lane-area detector aggregation.
//!
//! A detector spans its whole lane and reduces the per-second observations of
//! one collection interval to the 23 statistics in [`FEATURE_NAMES`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const N_FEATURES: usize = 23;

/// Feature schema, in column order F1..F23.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "sampledSeconds",
    "nVehEntered",
    "nVehLeft",
    "nVehSeen",
    "meanSpeed",
    "meanTimeLoss",
    "meanOccupancy",
    "maxOccupancy",
    "meanVehicleNumber",
    "maxVehicleNumber",
    "meanHaltingDuration",
    "maxHaltingDuration",
    "haltingDurationSum",
    "meanIntervalHaltingDuration",
    "maxIntervalHaltingDuration",
    "intervalHaltingDurationSum",
    "startedHalts",
    "meanJamLengthInVehicles",
    "meanJamLengthInMeters",
    "maxJamLengthInVehicles",
    "maxJamLengthInMeters",
    "jamLengthInVehiclesSum",
    "jamLengthInMetersSum",
];

/// Zero-based column indices of frequently used features.
pub mod feature {
    pub const MEAN_OCCUPANCY: usize = 6;
    pub const MEAN_VEHICLE_NUMBER: usize = 8;
    pub const MAX_HALTING_DURATION: usize = 11;
    pub const JAM_METERS_SUM: usize = 22;
}

/// Ground-truth label. Numeric form follows the learning convention: 1 normal, 0 hacked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Normal,
    Hacked,
}

impl Label {
    pub fn target(self) -> u8 {
        match self {
            Label::Normal => 1,
            Label::Hacked => 0,
        }
    }

    pub fn from_target(t: u8) -> Option<Self> {
        match t {
            1 => Some(Label::Normal),
            0 => Some(Label::Hacked),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRecord {
    pub begin: u64,
    pub end: u64,
    pub detector_id: String,
    pub label: Label,
    pub features: [f64; N_FEATURES],
}

/// State of one vehicle as seen by a detector at a tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedVehicle {
    pub id: u64,
    /// Time the current continuous halt began, if halted.
    pub halt_start: Option<u64>,
    /// Halted seconds accumulated before the current halt.
    pub prior_halt: u64,
}

impl ObservedVehicle {
    fn lifetime_halt(&self, t: u64) -> u64 {
        self.prior_halt + self.halt_start.map_or(0, |s| t.saturating_sub(s))
    }
}

/// Lane geometry needed to convert counts into lengths and occupancies.
#[derive(Debug, Clone, Copy)]
pub struct LaneGeometry {
    pub lane_length: f64,
    pub vehicle_length: f64,
    pub min_gap: f64,
    pub free_flow_speed: f64,
}

#[derive(Debug, Default, Clone)]
struct VehicleSummary {
    max_elapsed: Option<u64>,
    interval_halt: u64,
    lifetime_halt: u64,
}

/// Collects the ticks of one interval for one detector.
#[derive(Debug, Clone)]
pub struct DetectorAccumulator {
    geometry: LaneGeometry,
    begin: u64,
    ticks: u32,
    vehicle_seconds: u64,
    halted_seconds: u64,
    entered: u64,
    left: u64,
    max_count: usize,
    occupancy_sum: f64,
    occupancy_max: f64,
    jam_vehicles_sum: u64,
    jam_vehicles_max: usize,
    started_halts: u64,
    vehicles: BTreeMap<u64, VehicleSummary>,
}

impl DetectorAccumulator {
    pub fn new(geometry: LaneGeometry, begin: u64) -> Self {
        Self {
            geometry,
            begin,
            ticks: 0,
            vehicle_seconds: 0,
            halted_seconds: 0,
            entered: 0,
            left: 0,
            max_count: 0,
            occupancy_sum: 0.0,
            occupancy_max: 0.0,
            jam_vehicles_sum: 0,
            jam_vehicles_max: 0,
            started_halts: 0,
            vehicles: BTreeMap::new(),
        }
    }

    pub fn begin(&self) -> u64 {
        self.begin
    }

    /// Record the lane state at tick `t` (clock value after a simulation step).
    /// `entered` counts vehicles that joined the lane in the step ending at `t`;
    /// `left` holds the final state of vehicles that left it in that step.
    pub fn observe(&mut self, t: u64, present: &[ObservedVehicle], entered: usize, left: &[ObservedVehicle]) {
        debug_assert!(t > self.begin);
        self.ticks += 1;
        self.entered += entered as u64;
        self.left += left.len() as u64;
        let count = present.len();
        self.vehicle_seconds += count as u64;
        self.max_count = self.max_count.max(count);
        let occ = (count as f64 * self.geometry.vehicle_length / self.geometry.lane_length * 100.0).min(100.0);
        self.occupancy_sum += occ;
        self.occupancy_max = self.occupancy_max.max(occ);

        let mut jam = 0usize;
        for v in present {
            let summary = self.vehicles.entry(v.id).or_default();
            summary.lifetime_halt = v.lifetime_halt(t);
            if let Some(start) = v.halt_start {
                jam += 1;
                let elapsed = t.saturating_sub(start);
                summary.max_elapsed = Some(summary.max_elapsed.map_or(elapsed, |m| m.max(elapsed)));
                if start == t && start > self.begin {
                    self.started_halts += 1;
                }
                if t > start {
                    summary.interval_halt += 1;
                    self.halted_seconds += 1;
                }
            }
        }
        // A departing vehicle's last halt counts toward its lifetime total.
        for v in left {
            let summary = self.vehicles.entry(v.id).or_default();
            summary.lifetime_halt = summary.lifetime_halt.max(v.prior_halt);
        }
        self.jam_vehicles_sum += jam as u64;
        self.jam_vehicles_max = self.jam_vehicles_max.max(jam);
    }

    /// Reduce the collected ticks into F1..F23 and reset for the next interval.
    pub fn finish(&mut self, end: u64) -> [f64; N_FEATURES] {
        let g = self.geometry;
        let spacing = g.vehicle_length + g.min_gap;
        let ticks = f64::from(self.ticks.max(1));
        let seen = self.vehicles.len();

        let mean_speed = if self.vehicle_seconds == 0 {
            g.free_flow_speed
        } else {
            let moving = self.vehicle_seconds - self.jam_vehicles_sum;
            moving as f64 * g.free_flow_speed / self.vehicle_seconds as f64
        };

        let halted: Vec<&VehicleSummary> = self.vehicles.values().filter(|s| s.max_elapsed.is_some()).collect();
        let (mean_halt, max_halt) = mean_max(halted.iter().map(|s| s.max_elapsed.unwrap_or(0) as f64));
        let (mean_ihalt, max_ihalt) = mean_max(halted.iter().map(|s| s.interval_halt as f64));
        let interval_halt_sum: u64 = halted.iter().map(|s| s.interval_halt).sum();
        let lifetime_sum: u64 = self.vehicles.values().map(|s| s.lifetime_halt).sum();

        let mean_jam_veh = self.jam_vehicles_sum as f64 / ticks;
        let features = [
            self.vehicle_seconds as f64,
            self.entered as f64,
            self.left as f64,
            seen as f64,
            mean_speed,
            if seen == 0 { 0.0 } else { self.halted_seconds as f64 / seen as f64 },
            self.occupancy_sum / ticks,
            self.occupancy_max,
            self.vehicle_seconds as f64 / ticks,
            self.max_count as f64,
            mean_halt,
            max_halt,
            lifetime_sum as f64,
            mean_ihalt,
            max_ihalt,
            interval_halt_sum as f64,
            self.started_halts as f64,
            mean_jam_veh,
            mean_jam_veh * spacing,
            self.jam_vehicles_max as f64,
            self.jam_vehicles_max as f64 * spacing,
            self.jam_vehicles_sum as f64,
            self.jam_vehicles_sum as f64 * spacing,
        ];
        *self = Self::new(g, end);
        features
    }
}

fn mean_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut sum, mut max) = (0usize, 0.0, 0.0f64);
    for v in values {
        n += 1;
        sum += v;
        max = max.max(v);
    }
    if n == 0 {
        (0.0, 0.0)
    } else {
        (sum / n as f64, max)
    }
}

/// Check the cross-feature consistency rules every record must satisfy.
pub fn check_record(features: &[f64; N_FEATURES]) -> std::result::Result<(), String> {
    if let Some(i) = features.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(format!("F{} = {} is not a finite non-negative value", i + 1, features[i]));
    }
    for &occ in &features[6..8] {
        if occ > 100.0 {
            return Err(format!("occupancy {occ} exceeds 100%"));
        }
    }
    let f = |i: usize| features[i - 1];
    let pairs = [(8, 7), (10, 9), (12, 11), (15, 14), (20, 18), (21, 19), (13, 16)];
    for (hi, lo) in pairs {
        if f(hi) + 1e-9 < f(lo) {
            return Err(format!("F{hi} = {} < F{lo} = {}", f(hi), f(lo)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> LaneGeometry {
        LaneGeometry {
            lane_length: 100.0,
            vehicle_length: 5.0,
            min_gap: 2.5,
            free_flow_speed: 13.89,
        }
    }

    fn halted(id: u64, start: u64) -> ObservedVehicle {
        ObservedVehicle {
            id,
            halt_start: Some(start),
            prior_halt: 0,
        }
    }

    #[test]
    fn empty_lane_reports_zeros_and_free_flow_speed() {
        let mut acc = DetectorAccumulator::new(geometry(), 0);
        for t in 1..=10 {
            acc.observe(t, &[], 0, &[]);
        }
        let f = acc.finish(10);
        for (i, v) in f.iter().enumerate() {
            if i == 4 {
                assert_eq!(*v, 13.89);
            } else {
                assert_eq!(*v, 0.0, "{}", FEATURE_NAMES[i]);
            }
        }
    }

    #[test]
    fn three_halted_vehicles_for_the_full_interval() {
        let mut acc = DetectorAccumulator::new(geometry(), 0);
        let vs = [halted(1, 0), halted(2, 0), halted(3, 0)];
        for t in 1..=10 {
            acc.observe(t, &vs, 0, &[]);
        }
        let f = acc.finish(10);
        assert_eq!(f[18], 22.5); // F19
        assert_eq!(f[6], 15.0); // F7
        assert_eq!(f[22], 225.0); // F23
        assert_eq!(f[4], 0.0);
        check_record(&f).unwrap();
    }

    #[test]
    fn halt_clock_counts_from_onset() {
        let mut acc = DetectorAccumulator::new(geometry(), 0);
        let moving = ObservedVehicle {
            id: 7,
            halt_start: None,
            prior_halt: 0,
        };
        acc.observe(1, &[moving], 1, &[]);
        for t in 2..=10 {
            acc.observe(t, &[halted(7, 2)], 0, &[]);
        }
        let f = acc.finish(10);
        assert_eq!(f[11], 8.0); // F12
        assert_eq!(f[16], 1.0); // F17
        assert_eq!(f[15], 8.0); // F16
        assert_eq!(f[1], 1.0);
        check_record(&f).unwrap();
    }

    #[test]
    fn halts_started_in_earlier_interval_are_not_restarted() {
        let mut acc = DetectorAccumulator::new(geometry(), 10);
        let v = ObservedVehicle {
            id: 1,
            halt_start: Some(4),
            prior_halt: 3,
        };
        for t in 11..=20 {
            acc.observe(t, &[v], 0, &[]);
        }
        let f = acc.finish(20);
        assert_eq!(f[16], 0.0);
        assert_eq!(f[11], 16.0);
        assert_eq!(f[14], 10.0);
        assert_eq!(f[12], 19.0);
        check_record(&f).unwrap();
    }
}
