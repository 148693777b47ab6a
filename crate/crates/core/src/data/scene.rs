//! Synthetic multi-lane highway traffic.
//!
//! Vehicles drive on a straight ring road (the longitudinal coordinate wraps
//! at `road_length`) laid out in a world-fixed metric frame with an arbitrary
//! heading. Longitudinal motion follows the intelligent driver model; lane
//! changes are discretionary, triggered at a configurable Poisson rate,
//! gap-checked, and executed as a smooth logistic lateral profile.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::types::{seconds_to_steps, wrap_angle, VehicleState, STEP_SECONDS};
use crate::error::{Error, Result};
use crate::math::sigmoid_scalar;

/// Steepness of the normalized logistic lateral profile.
const PROFILE_STEEPNESS: f64 = 10.0;
const IDM_MAX_ACCEL: f64 = 1.5;
const IDM_COMFORT_DECEL: f64 = 2.0;
const IDM_TIME_HEADWAY: f64 = 1.2;
const MAX_BRAKE: f64 = 9.0;
/// Lane-change safety: minimum bumper gaps and the hardest deceleration the
/// new follower may be asked for.
const LC_MIN_FRONT_GAP: f64 = 10.0;
const LC_MIN_REAR_GAP: f64 = 10.0;
const LC_MAX_FOLLOWER_DECEL: f64 = 3.0;
const LC_COOLDOWN_SECONDS: f64 = 4.0;

fn default_lanes() -> usize {
    3
}
fn default_vehicles() -> usize {
    30
}
fn default_duration() -> f64 {
    600.0
}
fn default_rate() -> f64 {
    1.0
}
fn default_lane_width() -> f64 {
    3.7
}
fn default_vehicle_length() -> f64 {
    4.5
}
fn default_min_gap() -> f64 {
    2.0
}
fn default_lc_seconds() -> f64 {
    4.0
}
fn default_speed_min() -> f64 {
    25.0
}
fn default_speed_max() -> f64 {
    35.0
}
fn default_warmup() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(default = "default_lanes")]
    pub num_lanes: usize,
    #[serde(default = "default_vehicles")]
    pub num_vehicles: usize,
    #[serde(default = "default_duration")]
    pub duration_seconds: f64,
    #[serde(default = "default_rate")]
    pub lane_change_rate_per_vehicle_per_minute: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lane_width")]
    pub lane_width: f64,
    /// Ring length in meters; defaults to 40 m per vehicle.
    #[serde(default)]
    pub road_length: Option<f64>,
    #[serde(default = "default_vehicle_length")]
    pub vehicle_length: f64,
    /// Minimum bumper-to-bumper gap, also the IDM jam distance.
    #[serde(default = "default_min_gap")]
    pub min_gap: f64,
    #[serde(default = "default_lc_seconds")]
    pub lane_change_seconds: f64,
    #[serde(default = "default_speed_min")]
    pub desired_speed_min: f64,
    #[serde(default = "default_speed_max")]
    pub desired_speed_max: f64,
    /// Simulated but unrecorded lead-in.
    #[serde(default = "default_warmup")]
    pub warmup_seconds: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_lanes: default_lanes(),
            num_vehicles: default_vehicles(),
            duration_seconds: default_duration(),
            lane_change_rate_per_vehicle_per_minute: default_rate(),
            seed: 0,
            lane_width: default_lane_width(),
            road_length: None,
            vehicle_length: default_vehicle_length(),
            min_gap: default_min_gap(),
            lane_change_seconds: default_lc_seconds(),
            desired_speed_min: default_speed_min(),
            desired_speed_max: default_speed_max(),
            warmup_seconds: default_warmup(),
        }
    }
}

impl GeneratorConfig {
    pub fn effective_road_length(&self) -> f64 {
        self.road_length.unwrap_or(40.0 * self.num_vehicles.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub step: usize,
    /// Lane index, 0 = leftmost in the direction of travel.
    pub lane: usize,
    /// Unwrapped longitudinal road coordinate, meters.
    pub station: f64,
    /// Lateral offset from the road center line, positive to the left.
    pub offset: f64,
    pub state: VehicleState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    /// Consecutive steps starting at `points[0].step`.
    pub points: Vec<TrackPoint>,
}

impl Track {
    pub fn start_step(&self) -> usize {
        self.points.first().map_or(0, |p| p.step)
    }

    pub fn point_at(&self, step: usize) -> Option<&TrackPoint> {
        step.checked_sub(self.start_step()).and_then(|i| self.points.get(i))
    }
}

/// A completed lane change, in recorded steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneChangeEvent {
    pub track: usize,
    pub start_step: usize,
    pub end_step: usize,
    pub from_lane: usize,
    pub to_lane: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficScene {
    pub num_lanes: usize,
    pub lane_width: f64,
    /// Ring period of the station coordinate; `None` for an open road.
    pub road_length: Option<f64>,
    /// Road direction in the world frame, radians.
    pub heading: f64,
    pub origin: (f64, f64),
    pub tracks: Vec<Track>,
    pub lane_changes: Vec<LaneChangeEvent>,
}

impl TrafficScene {
    /// Station difference `to - from`, wrapped onto the ring when there is one.
    pub fn station_delta(&self, from: f64, to: f64) -> f64 {
        let d = to - from;
        match self.road_length {
            Some(l) => {
                let mut w = d.rem_euclid(l);
                if w > l / 2.0 {
                    w -= l;
                }
                w
            }
            None => d,
        }
    }

    pub fn direction(&self) -> (f64, f64) {
        (self.heading.cos(), self.heading.sin())
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        lane_center(self.num_lanes, self.lane_width, lane)
    }

    /// World-frame state of a vehicle at a road position, heading aligned with
    /// the road unless lateral motion is given.
    pub fn state_at(&self, station: f64, offset: f64, speed: f64, lane: usize) -> VehicleState {
        world_state(self, station, offset, speed, 0.0, 0.0, 0.0, lane)
    }
}

fn lane_center(num_lanes: usize, lane_width: f64, lane: usize) -> f64 {
    ((num_lanes as f64 - 1.0) / 2.0 - lane as f64) * lane_width
}

fn lane_of_offset(num_lanes: usize, lane_width: f64, offset: f64) -> usize {
    let j = ((num_lanes as f64 - 1.0) / 2.0 - offset / lane_width).round();
    j.clamp(0.0, num_lanes as f64 - 1.0) as usize
}

#[allow(clippy::too_many_arguments)]
fn world_state(
    scene: &TrafficScene,
    station: f64,
    offset: f64,
    speed: f64,
    lat_speed: f64,
    accel: f64,
    lat_accel: f64,
    lane: usize,
) -> VehicleState {
    let (ux, uy) = scene.direction();
    let (nx, ny) = (-uy, ux);
    let psi_rel = lat_speed.atan2(speed);
    let denom = speed * speed + lat_speed * lat_speed;
    let psi_dot = if denom > 0.0 {
        (lat_accel * speed - lat_speed * accel) / denom
    } else {
        0.0
    };
    VehicleState {
        px: scene.origin.0 + station * ux + offset * nx,
        py: scene.origin.1 + station * uy + offset * ny,
        psi: wrap_angle(scene.heading + psi_rel),
        vx: speed * ux + lat_speed * nx,
        vy: speed * uy + lat_speed * ny,
        psi_dot,
        n_left: lane as f64,
        n_right: (scene.num_lanes - 1 - lane) as f64,
    }
}

/// Normalized logistic profile on `[0, 1]` with exact endpoints, and its first
/// two derivatives with respect to `u`.
fn profile(u: f64) -> (f64, f64, f64) {
    let k = PROFILE_STEEPNESS;
    let lo = sigmoid_scalar(-k / 2.0);
    let hi = sigmoid_scalar(k / 2.0);
    let norm = hi - lo;
    let s = sigmoid_scalar(k * (u - 0.5));
    let ds = k * s * (1.0 - s);
    let dds = k * k * s * (1.0 - s) * (1.0 - 2.0 * s);
    ((s - lo) / norm, ds / norm, dds / norm)
}

#[derive(Debug, Clone)]
struct LaneChange {
    from: usize,
    to: usize,
    elapsed: f64,
    start_step: Option<usize>,
}

#[derive(Debug, Clone)]
struct Vehicle {
    station: f64,
    speed: f64,
    accel: f64,
    desired_speed: f64,
    lane: usize,
    change: Option<LaneChange>,
    cooldown: f64,
}

impl Vehicle {
    fn occupies(&self, lane: usize) -> bool {
        match &self.change {
            Some(c) => c.from == lane || c.to == lane,
            None => self.lane == lane,
        }
    }

    fn shares_lane(&self, other: &Vehicle) -> bool {
        match &self.change {
            Some(c) => other.occupies(c.from) || other.occupies(c.to),
            None => other.occupies(self.lane),
        }
    }
}

struct Simulator<'a> {
    cfg: &'a GeneratorConfig,
    road_length: f64,
    vehicles: Vec<Vehicle>,
    rng: ChaCha8Rng,
}

impl Simulator<'_> {
    fn ahead(&self, from: f64, to: f64) -> f64 {
        (to - from).rem_euclid(self.road_length)
    }

    /// Nearest vehicle ahead of `i` among those matching `filter`, with the
    /// wrapped center-to-center distance.
    fn leader_where(&self, i: usize, filter: impl Fn(&Vehicle) -> bool) -> Option<(usize, f64)> {
        let me = &self.vehicles[i];
        self.vehicles
            .iter()
            .enumerate()
            .filter(|&(j, v)| j != i && filter(v))
            .map(|(j, v)| (j, self.ahead(me.station, v.station)))
            .filter(|&(_, d)| d > 0.0)
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    fn follower_where(&self, i: usize, filter: impl Fn(&Vehicle) -> bool) -> Option<(usize, f64)> {
        let me = &self.vehicles[i];
        self.vehicles
            .iter()
            .enumerate()
            .filter(|&(j, v)| j != i && filter(v))
            .map(|(j, v)| (j, self.ahead(v.station, me.station)))
            .filter(|&(_, d)| d > 0.0)
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    fn idm(&self, speed: f64, desired: f64, leader: Option<(f64, f64)>) -> f64 {
        let free = IDM_MAX_ACCEL * (1.0 - (speed / desired).powi(4));
        let a = match leader {
            Some((gap, leader_speed)) => {
                let dv = speed - leader_speed;
                let s_star = self.cfg.min_gap
                    + (speed * IDM_TIME_HEADWAY + speed * dv / (2.0 * (IDM_MAX_ACCEL * IDM_COMFORT_DECEL).sqrt())).max(0.0);
                free - IDM_MAX_ACCEL * (s_star / gap.max(0.1)).powi(2)
            }
            None => free,
        };
        a.max(-MAX_BRAKE)
    }

    fn gap_to(&self, center_distance: f64) -> f64 {
        center_distance - self.cfg.vehicle_length
    }

    fn accel_of(&self, i: usize) -> f64 {
        let me = &self.vehicles[i];
        let leader = self
            .leader_where(i, |v| me.shares_lane(v) || v.shares_lane(me))
            .map(|(j, d)| (self.gap_to(d), self.vehicles[j].speed));
        self.idm(me.speed, me.desired_speed, leader)
    }

    /// Acceleration `i` would have with lane `lane` as its only lane, or
    /// `None` when moving there is unsafe.
    fn evaluate_change(&self, i: usize, lane: usize) -> Option<f64> {
        let me = &self.vehicles[i];
        let leader = self.leader_where(i, |v| v.occupies(lane));
        let follower = self.follower_where(i, |v| v.occupies(lane));
        if let Some((_, d)) = leader {
            if self.gap_to(d) < LC_MIN_FRONT_GAP {
                return None;
            }
        }
        if let Some((j, d)) = follower {
            let gap = self.gap_to(d);
            if gap < LC_MIN_REAR_GAP {
                return None;
            }
            let f = &self.vehicles[j];
            if self.idm(f.speed, f.desired_speed, Some((gap, me.speed))) < -LC_MAX_FOLLOWER_DECEL {
                return None;
            }
        }
        Some(self.idm(me.speed, me.desired_speed, leader.map(|(j, d)| (self.gap_to(d), self.vehicles[j].speed))))
    }

    fn maybe_start_changes(&mut self) {
        let p = self.cfg.lane_change_rate_per_vehicle_per_minute / 60.0 * STEP_SECONDS;
        for i in 0..self.vehicles.len() {
            let draw: f64 = self.rng.random();
            let tie: f64 = self.rng.random();
            let v = &self.vehicles[i];
            if v.change.is_some() || v.cooldown > 0.0 || draw >= p {
                continue;
            }
            let lane = v.lane;
            let mut options = Vec::new();
            if lane > 0 {
                if let Some(a) = self.evaluate_change(i, lane - 1) {
                    options.push((lane - 1, a));
                }
            }
            if lane + 1 < self.cfg.num_lanes {
                if let Some(a) = self.evaluate_change(i, lane + 1) {
                    options.push((lane + 1, a));
                }
            }
            // Prefer the lane with more room to accelerate; near-ties split at random.
            let target = match options.as_slice() {
                [] => continue,
                [(l, _)] => *l,
                [(l0, a0), (l1, a1)] => {
                    if (a0 - a1).abs() < 0.1 {
                        if tie < 0.5 {
                            *l0
                        } else {
                            *l1
                        }
                    } else if a0 > a1 {
                        *l0
                    } else {
                        *l1
                    }
                }
                _ => unreachable!(),
            };
            self.vehicles[i].change = Some(LaneChange {
                from: lane,
                to: target,
                elapsed: 0.0,
                start_step: None,
            });
        }
    }

    /// Pushes followers back so that every same-lane bumper gap exceeds the
    /// minimum gap.
    fn enforce_gaps(&mut self) {
        let margin = self.cfg.min_gap + 1e-3;
        for _ in 0..(self.vehicles.len() + 1) {
            let mut moved = false;
            for i in 0..self.vehicles.len() {
                let me = self.vehicles[i].clone();
                if let Some((j, d)) = self.leader_where(i, |v| me.shares_lane(v) || v.shares_lane(&me)) {
                    let gap = self.gap_to(d);
                    if gap < margin {
                        let lead_speed = self.vehicles[j].speed;
                        let v = &mut self.vehicles[i];
                        v.station -= margin - gap;
                        v.speed = v.speed.min(lead_speed);
                        moved = true;
                    }
                }
            }
            if !moved {
                break;
            }
        }
    }

    fn advance(&mut self) {
        self.maybe_start_changes();
        let accels: Vec<f64> = (0..self.vehicles.len()).map(|i| self.accel_of(i)).collect();
        let lc_seconds = self.cfg.lane_change_seconds;
        for (v, a) in self.vehicles.iter_mut().zip(accels) {
            let new_speed = (v.speed + a * STEP_SECONDS).max(0.0);
            v.accel = (new_speed - v.speed) / STEP_SECONDS;
            v.speed = new_speed;
            v.station += v.speed * STEP_SECONDS;
            v.cooldown -= STEP_SECONDS;
            if let Some(c) = &mut v.change {
                c.elapsed += STEP_SECONDS;
                if c.elapsed >= lc_seconds - 1e-9 {
                    v.lane = c.to;
                    v.change = None;
                    v.cooldown = LC_COOLDOWN_SECONDS;
                }
            }
        }
        self.enforce_gaps();
    }

    /// Lateral offset, velocity and acceleration of vehicle `i`.
    fn lateral(&self, i: usize) -> (f64, f64, f64) {
        let v = &self.vehicles[i];
        let (n, w) = (self.cfg.num_lanes, self.cfg.lane_width);
        match &v.change {
            None => (lane_center(n, w, v.lane), 0.0, 0.0),
            Some(c) => {
                let dur = self.cfg.lane_change_seconds;
                let from = lane_center(n, w, c.from);
                let delta = lane_center(n, w, c.to) - from;
                let (s, ds, dds) = profile((c.elapsed / dur).clamp(0.0, 1.0));
                (from + delta * s, delta * ds / dur, delta * dds / (dur * dur))
            }
        }
    }
}

/// Simulates a scene. Deterministic given the configuration (seed included).
pub fn generate_scene(cfg: &GeneratorConfig) -> Result<TrafficScene> {
    if cfg.num_lanes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 lanes, got {}", cfg.num_lanes)));
    }
    if cfg.duration_seconds < 20.0 {
        return Err(Error::InvalidArgument(format!(
            "scene duration must be at least 20 s, got {}",
            cfg.duration_seconds
        )));
    }
    if !(cfg.desired_speed_min > 0.0 && cfg.desired_speed_max >= cfg.desired_speed_min) {
        return Err(Error::InvalidArgument("invalid desired speed range".into()));
    }
    if cfg.lane_change_rate_per_vehicle_per_minute < 0.0 || cfg.lane_change_seconds <= 0.0 {
        return Err(Error::InvalidArgument("lane-change rate and duration must be non-negative/positive".into()));
    }
    let road_length = cfg.effective_road_length();
    let per_lane = cfg.num_vehicles.div_ceil(cfg.num_lanes);
    let slot = cfg.vehicle_length + cfg.min_gap;
    if cfg.num_vehicles as f64 * cfg.min_gap > road_length || per_lane as f64 * slot > road_length {
        return Err(Error::Infeasible(format!(
            "{} vehicles cannot fit on {} lanes of a {road_length} m road",
            cfg.num_vehicles, cfg.num_lanes
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let heading = rng.random_range(-PI..PI);
    let origin = (rng.random_range(-5000.0..5000.0), rng.random_range(-5000.0..5000.0));

    let mut vehicles = Vec::with_capacity(cfg.num_vehicles);
    for lane in 0..cfg.num_lanes {
        let count = (lane..cfg.num_vehicles).step_by(cfg.num_lanes).count();
        if count == 0 {
            continue;
        }
        let spacing = road_length / count as f64;
        let jitter = ((spacing - slot) / 2.0).max(0.0) * 0.8;
        let phase = rng.random_range(0.0..spacing);
        for k in 0..count {
            let desired = rng.random_range(cfg.desired_speed_min..=cfg.desired_speed_max);
            let station = phase + k as f64 * spacing + rng.random_range(-jitter..=jitter);
            vehicles.push(Vehicle {
                station,
                speed: 0.9 * desired,
                accel: 0.0,
                desired_speed: desired,
                lane,
                change: None,
                cooldown: rng.random_range(0.0..LC_COOLDOWN_SECONDS),
            });
        }
    }
    // Stable vehicle order: by lane, then position.
    vehicles.sort_by(|a, b| a.lane.cmp(&b.lane).then(a.station.total_cmp(&b.station)));

    let mut sim = Simulator {
        cfg,
        road_length,
        vehicles,
        rng,
    };
    let warmup_steps = seconds_to_steps(cfg.warmup_seconds.max(0.0));
    for _ in 0..warmup_steps {
        sim.advance();
    }
    // Maneuvers still running from the warm-up are not reported.
    for v in sim.vehicles.iter_mut() {
        if let Some(c) = &mut v.change {
            c.start_step = None;
        }
    }

    let mut scene = TrafficScene {
        num_lanes: cfg.num_lanes,
        lane_width: cfg.lane_width,
        road_length: Some(road_length),
        heading,
        origin,
        tracks: (0..sim.vehicles.len())
            .map(|i| Track {
                id: i as u64,
                points: Vec::new(),
            })
            .collect(),
        lane_changes: Vec::new(),
    };
    let steps = seconds_to_steps(cfg.duration_seconds);
    let mut running: Vec<Option<(usize, usize, usize)>> = vec![None; sim.vehicles.len()];
    for step in 0..steps {
        if step > 0 {
            sim.advance();
        }
        for i in 0..sim.vehicles.len() {
            let (offset, lat_speed, lat_accel) = sim.lateral(i);
            let v = &sim.vehicles[i];
            let lane = lane_of_offset(cfg.num_lanes, cfg.lane_width, offset);
            let state = quantize(world_state(&scene, v.station, offset, v.speed, lat_speed, v.accel, lat_accel, lane));
            scene.tracks[i].points.push(TrackPoint {
                step,
                lane,
                station: v.station,
                offset,
                state,
            });
            match (&v.change, running[i]) {
                (Some(c), None) => {
                    // A maneuver seen for the first time this step started at
                    // the previous step (elapsed > 0 already) unless it is a
                    // warm-up leftover.
                    if c.elapsed <= STEP_SECONDS + 1e-9 && step > 0 {
                        running[i] = Some((step - 1, c.from, c.to));
                    }
                }
                (None, Some((start, from, to))) => {
                    scene.lane_changes.push(LaneChangeEvent {
                        track: i,
                        start_step: start,
                        end_step: step,
                        from_lane: from,
                        to_lane: to,
                    });
                    running[i] = None;
                }
                _ => {}
            }
        }
    }
    Ok(scene)
}

/// Rounds to sensor-like resolution: 0.1 mm, 0.1 mm/s, 1 µrad. Dividing by
/// the power of ten keeps the shortest decimal representation short.
fn quantize(s: VehicleState) -> VehicleState {
    let q = |x: f64, per_unit: f64| (x * per_unit).round() / per_unit;
    let mut psi = q(wrap_angle(s.psi), 1e6);
    if psi > PI {
        psi = q(psi - 2.0 * PI, 1e6);
    }
    VehicleState {
        px: q(s.px, 1e4),
        py: q(s.py, 1e4),
        psi,
        vx: q(s.vx, 1e4),
        vy: q(s.vy, 1e4),
        psi_dot: q(s.psi_dot, 1e6),
        n_left: s.n_left,
        n_right: s.n_right,
    }
}
