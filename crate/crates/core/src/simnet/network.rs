//! Grid topology and the one-second queue dynamics.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::config::{Approach, AttackEvent, AttackMode, NetworkConfig, Phase, UPDATE_PERIOD};
use super::detector::{DetectorAccumulator, DetectorRecord, Label, LaneGeometry, ObservedVehicle};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Identifies one incoming lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LaneRef {
    pub intersection: usize,
    pub approach: Approach,
    pub lane: usize,
}

/// Static description of the road grid.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    lanes: Vec<LaneRef>,
    /// First global lane index of each (intersection, approach).
    approach_offsets: Vec<[usize; 4]>,
    lane_rates: Vec<f64>,
    busiest: usize,
}

impl Network {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn intersection_count(&self) -> usize {
        self.config.intersection_count()
    }

    /// Intersection with the largest total exogenous arrival rate (lowest id on ties).
    pub fn busiest_intersection(&self) -> usize {
        self.busiest
    }

    pub fn lanes(&self) -> &[LaneRef] {
        &self.lanes
    }

    pub fn lane_index(&self, intersection: usize, approach: Approach, lane: usize) -> usize {
        self.approach_offsets[intersection][approach.index()] + lane
    }

    /// Global lane indices of every incoming lane of `intersection`, in N, E, S, W order.
    pub fn incoming_lanes(&self, intersection: usize) -> std::ops::Range<usize> {
        let start = self.approach_offsets[intersection][0];
        start..start + self.config.lanes_at_intersection()
    }

    pub fn detector_id(&self, lane: usize) -> String {
        let l = self.lanes[lane];
        format!("J{}_{}{}", l.intersection, l.approach.letter(), l.lane)
    }

    fn neighbour(&self, intersection: usize, heading: (i64, i64)) -> Option<usize> {
        let cols = self.config.grid_cols as i64;
        let r = (intersection as i64) / cols + heading.0;
        let c = (intersection as i64) % cols + heading.1;
        if r < 0 || c < 0 || r >= self.config.grid_rows as i64 || c >= cols {
            None
        } else {
            Some((r * cols + c) as usize)
        }
    }
}

/// Validate `config` and lay out the grid.
pub fn build_network(config: &NetworkConfig) -> Result<Network> {
    config.validate()?;
    let n = config.intersection_count();
    let mut lanes = Vec::with_capacity(n * config.lanes_at_intersection());
    let mut approach_offsets = Vec::with_capacity(n);
    let mut lane_rates = Vec::new();
    let mut busiest = (0, f64::NEG_INFINITY);
    for id in 0..n {
        let mut offsets = [0; 4];
        let mut total = 0.0;
        for approach in Approach::ALL {
            offsets[approach.index()] = lanes.len();
            let count = config.lanes_per_approach[approach.index()];
            let rate = config.approach_rate(id, approach);
            total += rate;
            for lane in 0..count {
                lanes.push(LaneRef {
                    intersection: id,
                    approach,
                    lane,
                });
                lane_rates.push(rate / count as f64);
            }
        }
        if total > busiest.1 {
            busiest = (id, total);
        }
        approach_offsets.push(offsets);
    }
    Ok(Network {
        config: config.clone(),
        lanes,
        approach_offsets,
        lane_rates,
        busiest: busiest.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vehicle {
    pub id: u64,
    pub halt_start: Option<u64>,
    pub prior_halt: u64,
}

impl Vehicle {
    fn observed(&self) -> ObservedVehicle {
        ObservedVehicle {
            id: self.id,
            halt_start: self.halt_start,
            prior_halt: self.prior_halt,
        }
    }
}

/// Vehicles on one lane: those still travelling toward the stop line and the
/// vertical queue standing at it.
#[derive(Debug, Clone, Default)]
pub struct LaneState {
    pub moving: VecDeque<(Vehicle, u64)>,
    pub queue: VecDeque<Vehicle>,
    /// Fractional departures earned during the current green.
    pub discharge_credit: f64,
}

impl LaneState {
    pub fn len(&self) -> usize {
        self.moving.len() + self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-intersection controller. `update_period` is fixed at [`UPDATE_PERIOD`].
#[derive(Debug, Clone)]
pub struct SignalController {
    pub intersection_id: usize,
    pub phase: Phase,
    pub update_period: u64,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FlowCounters {
    pub entered: u64,
    pub exited: u64,
    pub blocked: u64,
}

struct Monitor {
    lanes: Vec<usize>,
    accumulators: Vec<DetectorAccumulator>,
    entered: Vec<usize>,
    left: Vec<Vec<ObservedVehicle>>,
}

pub struct SimState {
    network: Network,
    clock: u64,
    lanes: Vec<LaneState>,
    controllers: Vec<SignalController>,
    attacks: Vec<AttackEvent>,
    arrivals_rng: ChaCha8Rng,
    routing_rng: ChaCha8Rng,
    attack_rng: ChaCha8Rng,
    poisson: Vec<Option<Poisson<f64>>>,
    next_vehicle: u64,
    counters: FlowCounters,
    monitor: Option<Monitor>,
    phase_log: Vec<(u64, usize, Phase)>,
    log_phases: bool,
}

impl SimState {
    pub fn new(network: Network) -> Self {
        let seed = network.config.seed;
        let poisson = network
            .lane_rates
            .iter()
            .map(|&r| (r > 0.0).then(|| Poisson::new(r).expect("positive finite rate")))
            .collect();
        let controllers = (0..network.intersection_count())
            .map(|id| SignalController {
                intersection_id: id,
                phase: network.config.program[0].phase,
                update_period: UPDATE_PERIOD,
            })
            .collect();
        Self {
            lanes: vec![LaneState::default(); network.lanes.len()],
            controllers,
            attacks: Vec::new(),
            arrivals_rng: rng::stream(seed, Stream::Arrivals),
            routing_rng: rng::stream(seed, Stream::Routing),
            attack_rng: rng::stream(seed, Stream::Attacks),
            poisson,
            next_vehicle: 0,
            counters: FlowCounters::default(),
            monitor: None,
            phase_log: Vec::new(),
            log_phases: false,
            clock: 0,
            network,
        }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn counters(&self) -> FlowCounters {
        self.counters
    }

    pub fn lane(&self, index: usize) -> &LaneState {
        &self.lanes[index]
    }

    pub fn lane_mut(&mut self, index: usize) -> &mut LaneState {
        &mut self.lanes[index]
    }

    pub fn controller(&self, intersection: usize) -> &SignalController {
        &self.controllers[intersection]
    }

    pub fn vehicles_in_network(&self) -> usize {
        self.lanes.iter().map(LaneState::len).sum()
    }

    /// Keep a log of every controller update, `(time, intersection, phase)`.
    pub fn record_phases(&mut self, on: bool) {
        self.log_phases = on;
    }

    pub fn phase_log(&self) -> &[(u64, usize, Phase)] {
        &self.phase_log
    }

    /// Place a vehicle at the stop line of `lane`, already halted. Used to set up scenarios.
    pub fn push_queued(&mut self, lane: usize) -> u64 {
        let id = self.fresh_id();
        self.lanes[lane].queue.push_back(Vehicle {
            id,
            halt_start: Some(self.clock),
            prior_halt: 0,
        });
        self.counters.entered += 1;
        id
    }

    /// Register attack events. They override the target controller at each
    /// update inside `[start, end)`.
    pub fn apply_attacks(&mut self, events: &[AttackEvent]) -> Result<()> {
        let n = self.network.intersection_count();
        for e in events {
            e.validate(n)?;
        }
        self.attacks.extend_from_slice(events);
        Ok(())
    }

    pub fn attacks(&self) -> &[AttackEvent] {
        &self.attacks
    }

    /// Attach detectors to `lanes`; their records are produced by [`SimState::sample_detectors`].
    pub fn monitor(&mut self, lanes: Vec<usize>) {
        let c = &self.network.config;
        let geometry = LaneGeometry {
            lane_length: c.lane_length,
            vehicle_length: c.vehicle_length,
            min_gap: c.min_gap,
            free_flow_speed: c.free_flow_speed,
        };
        let n = lanes.len();
        self.monitor = Some(Monitor {
            accumulators: vec![DetectorAccumulator::new(geometry, self.clock); n],
            entered: vec![0; n],
            left: vec![Vec::new(); n],
            lanes,
        });
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_vehicle += 1;
        self.next_vehicle
    }

    fn program_phase(&self, t: u64) -> Phase {
        let program = &self.network.config.program;
        let cycle: u64 = program.iter().map(|s| s.duration).sum();
        let mut offset = t % cycle;
        for s in program {
            if offset < s.duration {
                return s.phase;
            }
            offset -= s.duration;
        }
        program[0].phase
    }

    fn update_controllers(&mut self, t: u64) {
        let scheduled = self.program_phase(t);
        for id in 0..self.controllers.len() {
            let mut phase = scheduled;
            // The last matching event wins when attacks overlap.
            let attack = self.attacks.iter().rev().find(|a| a.target == id && a.active_at(t)).map(|a| a.mode);
            if let Some(mode) = attack {
                phase = match mode {
                    AttackMode::AllGreen => Phase::AllGreen,
                    AttackMode::AllRed => Phase::AllRed,
                    AttackMode::RandomEachUpdate => {
                        if self.attack_rng.random_bool(0.5) {
                            Phase::AllGreen
                        } else {
                            Phase::AllRed
                        }
                    }
                };
            }
            self.controllers[id].phase = phase;
            if self.log_phases {
                self.phase_log.push((t, id, phase));
            }
        }
    }

    fn choose_heading(&mut self, approach: Approach) -> (i64, i64) {
        let (dr, dc) = approach.heading();
        let w = self.network.config.turn_weights;
        let u = self.routing_rng.random::<f64>() * (w[0] + w[1] + w[2]);
        if u < w[0] {
            (dr, dc)
        } else if u < w[0] + w[1] {
            (-dc, dr)
        } else {
            (dc, -dr)
        }
    }

    fn monitored_slot(&self, lane: usize) -> Option<usize> {
        self.monitor.as_ref().and_then(|m| m.lanes.iter().position(|&l| l == lane))
    }

    /// Advance the simulation by one second.
    pub fn step(&mut self) {
        let t = self.clock;
        let next = t + 1;
        if t % UPDATE_PERIOD == 0 {
            self.update_controllers(t);
        }
        let cfg = self.network.config.clone();
        let capacity = cfg.lane_capacity();
        let travel = cfg.travel_time();

        for lane in &mut self.lanes {
            while lane.moving.front().is_some_and(|&(_, at)| at <= next) {
                let (v, _) = lane.moving.pop_front().expect("front checked");
                lane.queue.push_back(v);
            }
        }

        for li in 0..self.lanes.len() {
            let lref = self.network.lanes[li];
            let phase = self.controllers[lref.intersection].phase;
            if !phase.serves(lref.approach) {
                self.lanes[li].discharge_credit = 0.0;
                continue;
            }
            let factor = if phase == Phase::AllGreen {
                cfg.all_green_discharge_factor
            } else {
                1.0
            };
            self.lanes[li].discharge_credit += cfg.saturation_flow * factor;
            while self.lanes[li].discharge_credit >= 1.0 && !self.lanes[li].queue.is_empty() {
                let heading = self.choose_heading(lref.approach);
                let target = self.network.neighbour(lref.intersection, heading).map(|next_id| {
                    let approach = Approach::entered_by(heading);
                    let n_lanes = cfg.lanes_per_approach[approach.index()];
                    let lane = self.routing_rng.random_range(0..n_lanes);
                    self.network.lane_index(next_id, approach, lane)
                });
                if let Some(dest) = target {
                    if self.lanes[dest].len() >= capacity {
                        break;
                    }
                }
                let mut v = self.lanes[li].queue.pop_front().expect("queue non-empty");
                self.lanes[li].discharge_credit -= 1.0;
                if let Some(start) = v.halt_start.take() {
                    v.prior_halt += t - start;
                }
                if let Some(slot) = self.monitored_slot(li) {
                    if let Some(m) = self.monitor.as_mut() {
                        m.left[slot].push(v.observed());
                    }
                }
                match target {
                    Some(dest) => {
                        self.lanes[dest].moving.push_back((v, next + travel));
                        if let Some(slot) = self.monitored_slot(dest) {
                            if let Some(m) = self.monitor.as_mut() {
                                m.entered[slot] += 1;
                            }
                        }
                    }
                    None => self.counters.exited += 1,
                }
            }
            let lane = &mut self.lanes[li];
            lane.discharge_credit = lane.discharge_credit.min(1.0);
        }

        for lane in &mut self.lanes {
            for v in lane.queue.iter_mut().filter(|v| v.halt_start.is_none()) {
                v.halt_start = Some(next);
            }
        }

        for li in 0..self.lanes.len() {
            let Some(dist) = self.poisson[li] else { continue };
            let n = dist.sample(&mut self.arrivals_rng) as u64;
            for _ in 0..n {
                if self.lanes[li].len() >= capacity {
                    self.counters.blocked += 1;
                    continue;
                }
                let id = self.fresh_id();
                self.lanes[li].moving.push_back((
                    Vehicle {
                        id,
                        halt_start: None,
                        prior_halt: 0,
                    },
                    next + travel,
                ));
                self.counters.entered += 1;
                if let Some(slot) = self.monitored_slot(li) {
                    if let Some(m) = self.monitor.as_mut() {
                        m.entered[slot] += 1;
                    }
                }
            }
        }

        self.clock = next;
        if let Some(m) = self.monitor.as_mut() {
            let mut present = Vec::new();
            for (slot, &li) in m.lanes.iter().enumerate() {
                present.clear();
                let lane = &self.lanes[li];
                present.extend(lane.queue.iter().map(Vehicle::observed));
                present.extend(lane.moving.iter().map(|(v, _)| v.observed()));
                m.accumulators[slot].observe(next, &present, m.entered[slot], &m.left[slot]);
                m.entered[slot] = 0;
                m.left[slot].clear();
            }
        }
    }

    /// Close the current collection interval and emit one record per monitored
    /// detector, in monitoring order. Records are labelled normal; scenario
    /// code relabels them against the attack timeline.
    pub fn sample_detectors(&mut self, interval_end: u64) -> Result<Vec<DetectorRecord>> {
        if interval_end % UPDATE_PERIOD != 0 || interval_end != self.clock {
            return Err(Error::Data(format!(
                "detectors can only be sampled at the current clock on a {UPDATE_PERIOD} s boundary (clock {}, requested {interval_end})",
                self.clock
            )));
        }
        let Some(m) = self.monitor.as_mut() else {
            return Ok(Vec::new());
        };
        let mut out = Vec::with_capacity(m.lanes.len());
        for (slot, &li) in m.lanes.iter().enumerate() {
            let begin = m.accumulators[slot].begin();
            let features = m.accumulators[slot].finish(interval_end);
            out.push(DetectorRecord {
                begin,
                end: interval_end,
                detector_id: self.network.detector_id(li),
                label: Label::Normal,
                features,
            });
        }
        Ok(out)
    }
}
