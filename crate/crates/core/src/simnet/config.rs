use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};

/// Controller update period in seconds. Phases only change on multiples of it.
pub const UPDATE_PERIOD: u64 = 10;

/// Signal phase of one intersection controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    NsGreen,
    EwGreen,
    AllRed,
    AllGreen,
}

impl Phase {
    pub fn serves(self, approach: Approach) -> bool {
        match self {
            Phase::AllGreen => true,
            Phase::AllRed => false,
            Phase::NsGreen => matches!(approach, Approach::North | Approach::South),
            Phase::EwGreen => matches!(approach, Approach::East | Approach::West),
        }
    }
}

/// Side of the intersection a lane arrives from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    North,
    East,
    South,
    West,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::North, Approach::East, Approach::South, Approach::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Approach::North => 'N',
            Approach::East => 'E',
            Approach::South => 'S',
            Approach::West => 'W',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'N' => Some(Approach::North),
            'E' => Some(Approach::East),
            'S' => Some(Approach::South),
            'W' => Some(Approach::West),
            _ => None,
        }
    }

    /// Grid heading (drow, dcol) of vehicles leaving this approach straight on.
    pub(crate) fn heading(self) -> (i64, i64) {
        match self {
            Approach::North => (1, 0),
            Approach::South => (-1, 0),
            Approach::East => (0, -1),
            Approach::West => (0, 1),
        }
    }

    /// Approach used when entering a neighbour along `heading`.
    pub(crate) fn entered_by(heading: (i64, i64)) -> Self {
        match heading {
            (1, 0) => Approach::North,
            (-1, 0) => Approach::South,
            (0, -1) => Approach::East,
            _ => Approach::West,
        }
    }
}

/// One entry of a cyclic signal program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgramStep {
    pub phase: Phase,
    /// Seconds; must be a positive multiple of [`UPDATE_PERIOD`].
    pub duration: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Lanes on the north, east, south and west approaches of every intersection.
    pub lanes_per_approach: [usize; 4],
    pub lane_length: f64,
    pub free_flow_speed: f64,
    pub vehicle_length: f64,
    pub min_gap: f64,
    /// Vehicles per green second per lane.
    pub saturation_flow: f64,
    /// Discharge multiplier while every approach is green (conflicting movements).
    pub all_green_discharge_factor: f64,
    /// Straight, left and right turn weights.
    pub turn_weights: [f64; 3],
    /// Exogenous Poisson intensity (veh/s) of every approach not listed in `arrival_rates`.
    pub default_arrival_rate: f64,
    /// Overrides keyed `"<intersection>.<N|E|S|W>"`, in vehicles per second for the whole approach.
    pub arrival_rates: BTreeMap<String, f64>,
    pub program: Vec<ProgramStep>,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            grid_rows: 3,
            grid_cols: 3,
            lanes_per_approach: [5, 4, 5, 4],
            lane_length: 150.0,
            free_flow_speed: 13.89,
            vehicle_length: 5.0,
            min_gap: 2.5,
            saturation_flow: 0.5,
            all_green_discharge_factor: 0.5,
            turn_weights: [0.6, 0.2, 0.2],
            default_arrival_rate: 0.1,
            arrival_rates: BTreeMap::new(),
            program: vec![
                ProgramStep {
                    phase: Phase::NsGreen,
                    duration: 30,
                },
                ProgramStep {
                    phase: Phase::EwGreen,
                    duration: 30,
                },
            ],
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn intersection_count(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn lanes_at_intersection(&self) -> usize {
        self.lanes_per_approach.iter().sum()
    }

    /// Spacing one vehicle claims in a queue.
    pub fn vehicle_spacing(&self) -> f64 {
        self.vehicle_length + self.min_gap
    }

    pub fn lane_capacity(&self) -> usize {
        (self.lane_length / self.vehicle_spacing()).floor() as usize
    }

    pub fn travel_time(&self) -> u64 {
        ((self.lane_length / self.free_flow_speed).ceil() as u64).max(1)
    }

    /// Exogenous rate of one approach, in vehicles per second.
    pub fn approach_rate(&self, intersection: usize, approach: Approach) -> f64 {
        let key = format!("{intersection}.{}", approach.letter());
        self.arrival_rates
            .get(&key)
            .copied()
            .unwrap_or(self.default_arrival_rate)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return bad(format!(
                "grid must be at least 1x1, got {}x{}",
                self.grid_rows, self.grid_cols
            ));
        }
        if self.lanes_per_approach.contains(&0) {
            return bad("every approach needs at least one lane".into());
        }
        let positive = [
            ("free_flow_speed", self.free_flow_speed),
            ("vehicle_length", self.vehicle_length),
            ("saturation_flow", self.saturation_flow),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.min_gap.is_finite() && self.min_gap >= 0.0) {
            return bad(format!("min_gap must be non-negative, got {}", self.min_gap));
        }
        if !(self.lane_length.is_finite() && self.lane_length > self.vehicle_spacing()) {
            return bad(format!(
                "lane_length {} must exceed vehicle_length + min_gap = {}",
                self.lane_length,
                self.vehicle_spacing()
            ));
        }
        if !(0.0..=1.0).contains(&self.all_green_discharge_factor) {
            return bad("all_green_discharge_factor must lie in [0, 1]".into());
        }
        if self.turn_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.turn_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("turn_weights must be non-negative with a positive sum".into());
        }
        if !(self.default_arrival_rate.is_finite() && self.default_arrival_rate >= 0.0) {
            return bad("default_arrival_rate must be non-negative".into());
        }
        for (key, rate) in &self.arrival_rates {
            parse_rate_key(key, self.intersection_count())?;
            if !(rate.is_finite() && *rate >= 0.0) {
                return bad(format!("arrival rate for {key} must be non-negative, got {rate}"));
            }
        }
        if self.program.is_empty() {
            return bad("signal program must contain at least one step".into());
        }
        for step in &self.program {
            if step.duration == 0 || step.duration % UPDATE_PERIOD != 0 {
                return bad(format!(
                    "program step durations must be positive multiples of {UPDATE_PERIOD} s, got {}",
                    step.duration
                ));
            }
        }
        Ok(())
    }

    /// Digest over the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

fn parse_rate_key(key: &str, intersections: usize) -> Result<(usize, Approach)> {
    let err = || Error::Config(format!("bad arrival rate key {key:?}; expected \"<id>.<N|E|S|W>\""));
    let (id, side) = key.split_once('.').ok_or_else(err)?;
    let id: usize = id.trim().parse().map_err(|_| err())?;
    let mut chars = side.trim().chars();
    let approach = chars.next().and_then(Approach::from_letter).ok_or_else(err)?;
    if chars.next().is_some() {
        return Err(err());
    }
    if id >= intersections {
        return Err(Error::Config(format!(
            "arrival rate key {key:?} names intersection {id}, network has {intersections}"
        )));
    }
    Ok((id, approach))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackMode {
    AllGreen,
    AllRed,
    RandomEachUpdate,
}

/// A window during which one controller's phase is forced by an attacker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackEvent {
    pub start: u64,
    pub end: u64,
    pub target: usize,
    pub mode: AttackMode,
}

impl AttackEvent {
    pub fn active_at(&self, t: u64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn overlaps(&self, begin: u64, end: u64) -> bool {
        begin < self.end && self.start < end
    }

    pub fn validate(&self, intersections: usize) -> Result<()> {
        if self.start >= self.end {
            return Err(Error::Config(format!(
                "attack interval [{}, {}) is empty",
                self.start, self.end
            )));
        }
        if self.target >= intersections {
            return Err(Error::Config(format!(
                "attack target {} does not exist (network has {intersections} intersections)",
                self.target
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_with_eighteen_lanes() {
        let cfg = NetworkConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.lanes_at_intersection(), 18);
    }

    #[test]
    fn rejects_bad_dimensions_and_rates() {
        let mut cfg = NetworkConfig {
            grid_rows: 0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.grid_rows = 1;
        cfg.default_arrival_rate = -0.1;
        assert!(cfg.validate().is_err());
        cfg.default_arrival_rate = 0.1;
        cfg.lane_length = 7.0;
        assert!(cfg.validate().is_err());
        cfg.lane_length = 100.0;
        cfg.arrival_rates.insert("9.N".into(), 0.2);
        assert!(cfg.validate().is_err());
        cfg.arrival_rates.clear();
        cfg.arrival_rates.insert("0.Q".into(), 0.2);
        assert!(cfg.validate().is_err());
        cfg.arrival_rates.clear();
        cfg.program[0].duration = 15;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rate_lookup_uses_overrides() {
        let mut cfg = NetworkConfig::default();
        cfg.arrival_rates.insert("4.W".into(), 0.7);
        assert_eq!(cfg.approach_rate(4, Approach::West), 0.7);
        assert_eq!(cfg.approach_rate(4, Approach::East), cfg.default_arrival_rate);
    }

    #[test]
    fn attack_validation() {
        let a = AttackEvent {
            start: 10,
            end: 10,
            target: 0,
            mode: AttackMode::AllRed,
        };
        assert!(a.validate(1).is_err());
        let a = AttackEvent { end: 20, target: 3, ..a };
        assert!(a.validate(1).is_err());
        assert!(a.validate(4).is_ok());
        assert!(a.overlaps(0, 11));
        assert!(!a.overlaps(20, 30));
    }
}
