use serde::{Deserialize, Serialize};

use super::neighborhood::SceneIndex;
use super::scene::{TrafficScene, Track};
use super::types::{wrap_angle, HorizonConfig, Maneuver, NeighborObservation, Sample, VehicleState, NUM_SLOTS};
use crate::error::Result;

/// Label of `track` at prediction step `t` (the last history step): lane
/// index at `t + future - 7` against `t + future + 7`. `None` when the track
/// does not cover both endpoints.
pub fn label_maneuver(track: &Track, t: usize, horizon: &HorizonConfig) -> Option<Maneuver> {
    let center = t + horizon.future_steps();
    let half = horizon.label_halfwidth_steps();
    let before = track.point_at(center.checked_sub(half)?)?.lane;
    let after = track.point_at(center + half)?.lane;
    Some(match after.cmp(&before) {
        std::cmp::Ordering::Less => Maneuver::Left,
        std::cmp::Ordering::Greater => Maneuver::Right,
        std::cmp::Ordering::Equal => Maneuver::NoChange,
    })
}

/// How densely prediction times are sampled along each track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    /// Candidate prediction times every `stride` steps.
    pub stride: usize,
    /// Of the candidates labeled "none", keep every `none_stride`-th.
    pub none_stride: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig { stride: 1, none_stride: 1 }
    }
}

/// Cuts labeled, world-frame samples out of every track of a scene.
pub fn extract_samples(scene: &TrafficScene, index: &SceneIndex, horizon: &HorizonConfig, cfg: &ExtractConfig) -> Result<Vec<Sample>> {
    let hist = horizon.history_steps();
    let stride = cfg.stride.max(1);
    let none_stride = cfg.none_stride.max(1);
    let mut out = Vec::new();
    for (i, track) in scene.tracks.iter().enumerate() {
        let Some(first) = track.points.first() else {
            continue;
        };
        let start = first.step + hist - 1;
        let mut none_seen = 0usize;
        let mut t = start;
        while t < first.step + track.points.len() {
            let Some(label) = label_maneuver(track, t, horizon) else {
                break;
            };
            let keep = if label == Maneuver::NoChange {
                none_seen += 1;
                (none_seen - 1).is_multiple_of(none_stride)
            } else {
                true
            };
            if keep {
                out.push(build_sample(scene, index, i, t, *horizon, label)?);
            }
            t += stride;
        }
    }
    Ok(out)
}

fn build_sample(scene: &TrafficScene, index: &SceneIndex, track: usize, t: usize, horizon: HorizonConfig, label: Maneuver) -> Result<Sample> {
    let hist = horizon.history_steps();
    let tr = &scene.tracks[track];
    let mut target_history = Vec::with_capacity(hist);
    let mut neighbor_histories: [Vec<NeighborObservation>; NUM_SLOTS] = Default::default();
    for step in t + 1 - hist..=t {
        target_history.push(tr.point_at(step).expect("history inside track").state);
        let obs = index.neighborhood(scene, track, step).expect("history inside track");
        for (h, o) in neighbor_histories.iter_mut().zip(obs) {
            h.push(o);
        }
    }
    let sample = Sample {
        horizon,
        label,
        target_history,
        neighbor_histories,
        source_track_id: tr.id,
        source_time: t as u64,
    };
    sample.validate()?;
    Ok(sample)
}

/// Re-expresses a sample in the frame of the target's initial pose: position
/// at the origin, heading zero.
pub fn frame_normalize(sample: &Sample) -> Sample {
    let Some(first) = sample.target_history.first() else {
        return sample.clone();
    };
    let (x0, y0, psi0) = (first.px, first.py, first.psi);
    let (s, c) = (-psi0).sin_cos();
    let rotate = |x: f64, y: f64| (c * x - s * y, s * x + c * y);
    let map = |v: &VehicleState| {
        let (px, py) = rotate(v.px - x0, v.py - y0);
        let (vx, vy) = rotate(v.vx, v.vy);
        VehicleState {
            px,
            py,
            psi: wrap_angle(v.psi - psi0),
            vx,
            vy,
            ..*v
        }
    };
    let mut out = sample.clone();
    out.target_history.iter_mut().for_each(|v| *v = map(v));
    for slot in out.neighbor_histories.iter_mut() {
        for o in slot.iter_mut().filter(|o| o.present) {
            o.state = map(&o.state);
        }
    }
    out
}
