use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensor/map sampling rate.
pub const SAMPLE_RATE_HZ: f64 = 12.5;
pub const STEP_SECONDS: f64 = 1.0 / SAMPLE_RATE_HZ;
/// Half-width, in steps, of the window over which lane identifiers are
/// compared when labeling (0.5 s rounded up).
pub const LABEL_HALFWIDTH_STEPS: usize = 7;

pub const STATE_DIM: usize = 8;
/// Neighbor state plus presence indicator.
pub const NEIGHBOR_DIM: usize = STATE_DIM + 1;
pub const NUM_SLOTS: usize = 6;
/// Six neighbor slots followed by the target state.
pub const STEP_FEATURES: usize = NUM_SLOTS * NEIGHBOR_DIM + STATE_DIM;

pub const SUPPORTED_HISTORY_SECONDS: [f64; 3] = [1.0, 3.0, 5.0];
pub const SUPPORTED_FUTURE_SECONDS: [f64; 3] = [1.0, 2.0, 3.0];

/// Steps covering `seconds` at 12.5 Hz, fractional steps rounded up.
pub fn seconds_to_steps(seconds: f64) -> usize {
    // The tolerance keeps exact products such as 2 s -> 25.0 from rounding up
    // on representation error.
    (seconds * SAMPLE_RATE_HZ - 1e-9).ceil().max(0.0) as usize
}

/// Per-vehicle, per-step pose/velocity/lane record.
///
/// `n_left`/`n_right` are lane counts stored as floats so that standardized
/// samples keep the same type.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 8]", into = "[f64; 8]")]
pub struct VehicleState {
    pub px: f64,
    pub py: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub psi_dot: f64,
    pub n_left: f64,
    pub n_right: f64,
}

impl VehicleState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.px,
            self.py,
            self.psi,
            self.vx,
            self.vy,
            self.psi_dot,
            self.n_left,
            self.n_right,
        ]
    }

    pub fn is_zero(&self) -> bool {
        self.to_array().iter().all(|&x| x == 0.0)
    }
}

impl From<[f64; 8]> for VehicleState {
    fn from(a: [f64; 8]) -> Self {
        VehicleState {
            px: a[0],
            py: a[1],
            psi: a[2],
            vx: a[3],
            vy: a[4],
            psi_dot: a[5],
            n_left: a[6],
            n_right: a[7],
        }
    }
}

impl From<VehicleState> for [f64; 8] {
    fn from(s: VehicleState) -> Self {
        s.to_array()
    }
}

/// A neighbor slot at one step. Serialized as the eight state values followed
/// by the 0/1 indicator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct NeighborObservation {
    pub state: VehicleState,
    pub present: bool,
}

impl NeighborObservation {
    pub const ABSENT: NeighborObservation = NeighborObservation {
        state: VehicleState {
            px: 0.0,
            py: 0.0,
            psi: 0.0,
            vx: 0.0,
            vy: 0.0,
            psi_dot: 0.0,
            n_left: 0.0,
            n_right: 0.0,
        },
        present: false,
    };

    pub fn present(state: VehicleState) -> Self {
        NeighborObservation { state, present: true }
    }

    pub fn indicator(&self) -> f64 {
        if self.present {
            1.0
        } else {
            0.0
        }
    }
}

impl TryFrom<[f64; 9]> for NeighborObservation {
    type Error = String;

    fn try_from(a: [f64; 9]) -> std::result::Result<Self, String> {
        let mut s = [0.0; 8];
        s.copy_from_slice(&a[..8]);
        let state = VehicleState::from(s);
        let x = a[8];
        if x == 1.0 {
            Ok(NeighborObservation::present(state))
        } else if x == 0.0 {
            if !state.is_zero() {
                return Err("absent neighbor with non-zero state".into());
            }
            Ok(NeighborObservation::ABSENT)
        } else {
            Err(format!("indicator must be 0 or 1, got {x}"))
        }
    }
}

impl From<NeighborObservation> for [f64; 9] {
    fn from(o: NeighborObservation) -> Self {
        let s = o.state.to_array();
        [s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7], o.indicator()]
    }
}

/// Lane-change maneuver. Class order (left, right, none) is also the argmax
/// tie-break order. Lane index 0 is the leftmost lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Maneuver {
    #[serde(rename = "left")]
    Left,
    #[serde(rename = "right")]
    Right,
    #[serde(rename = "none")]
    NoChange,
}

impl Maneuver {
    pub const ALL: [Maneuver; 3] = [Maneuver::Left, Maneuver::Right, Maneuver::NoChange];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Maneuver> {
        Maneuver::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Maneuver::Left => "left",
            Maneuver::Right => "right",
            Maneuver::NoChange => "none",
        }
    }
}

impl fmt::Display for Maneuver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Maneuver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Maneuver::Left),
            "right" => Ok(Maneuver::Right),
            "none" => Ok(Maneuver::NoChange),
            other => Err(Error::InvalidArgument(format!("unknown maneuver '{other}'"))),
        }
    }
}

/// History length and prediction offset, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonConfig {
    pub history_seconds: f64,
    pub future_seconds: f64,
}

impl HorizonConfig {
    /// Restricted to the supported sets `{1,3,5} × {1,2,3}`.
    pub fn new(history_seconds: f64, future_seconds: f64) -> Result<Self> {
        if !SUPPORTED_HISTORY_SECONDS.contains(&history_seconds) || !SUPPORTED_FUTURE_SECONDS.contains(&future_seconds) {
            return Err(Error::InvalidArgument(format!(
                "unsupported horizon t_h={history_seconds}s t_f={future_seconds}s (pass an override to allow it)"
            )));
        }
        Ok(HorizonConfig {
            history_seconds,
            future_seconds,
        })
    }

    /// Any positive horizon.
    pub fn custom(history_seconds: f64, future_seconds: f64) -> Result<Self> {
        if !(history_seconds > 0.0 && future_seconds > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got t_h={history_seconds} t_f={future_seconds}"
            )));
        }
        Ok(HorizonConfig {
            history_seconds,
            future_seconds,
        })
    }

    /// The nine settings of the experiment grid, history-major.
    pub fn grid() -> Vec<HorizonConfig> {
        SUPPORTED_HISTORY_SECONDS
            .iter()
            .flat_map(|&h| {
                SUPPORTED_FUTURE_SECONDS.iter().map(move |&f| HorizonConfig {
                    history_seconds: h,
                    future_seconds: f,
                })
            })
            .collect()
    }

    pub fn history_steps(&self) -> usize {
        seconds_to_steps(self.history_seconds)
    }

    pub fn future_steps(&self) -> usize {
        seconds_to_steps(self.future_seconds)
    }

    pub fn label_halfwidth_steps(&self) -> usize {
        LABEL_HALFWIDTH_STEPS
    }
}

impl fmt::Display for HorizonConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t_h={}s t_f={}s", self.history_seconds, self.future_seconds)
    }
}

/// Neighbor slot order: left/same/right lane, ahead then behind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    LeftAhead = 0,
    LeftBehind = 1,
    SameAhead = 2,
    SameBehind = 3,
    RightAhead = 4,
    RightBehind = 5,
}

/// One labeled instance: the target's history and its six neighbor slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub horizon: HorizonConfig,
    pub label: Maneuver,
    #[serde(rename = "target")]
    pub target_history: Vec<VehicleState>,
    #[serde(rename = "neighbors")]
    pub neighbor_histories: [Vec<NeighborObservation>; NUM_SLOTS],
    #[serde(rename = "track")]
    pub source_track_id: u64,
    /// Step index of the last history step within the source track.
    #[serde(rename = "time")]
    pub source_time: u64,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.target_history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_history.is_empty()
    }

    /// Checks the structural invariants: equal-length histories matching the
    /// horizon, and zeroed absent slots.
    pub fn validate(&self) -> Result<()> {
        let n = self.target_history.len();
        if n != self.horizon.history_steps() {
            return Err(Error::dim("sample history", self.horizon.history_steps(), n));
        }
        for slot in &self.neighbor_histories {
            if slot.len() != n {
                return Err(Error::dim("neighbor history", n, slot.len()));
            }
            if slot.iter().any(|o| !o.present && !o.state.is_zero()) {
                return Err(Error::InvalidArgument("absent neighbor with non-zero state".into()));
            }
        }
        Ok(())
    }

    /// Step `k` as `[v0..v5 (state + indicator), target]`.
    pub fn step_features(&self, k: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), STEP_FEATURES);
        for (j, slot) in self.neighbor_histories.iter().enumerate() {
            let o = &slot[k];
            let base = j * NEIGHBOR_DIM;
            out[base..base + STATE_DIM].copy_from_slice(&o.state.to_array());
            out[base + STATE_DIM] = o.indicator();
        }
        out[NUM_SLOTS * NEIGHBOR_DIM..].copy_from_slice(&self.target_history[k].to_array());
    }

    /// All steps, `len × STEP_FEATURES` row-major.
    pub fn features(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len() * STEP_FEATURES];
        for k in 0..self.len() {
            self.step_features(k, &mut out[k * STEP_FEATURES..(k + 1) * STEP_FEATURES]);
        }
        out
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}
