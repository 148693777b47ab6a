use super::scene::TrafficScene;
use super::types::{NeighborObservation, NUM_SLOTS};
use crate::error::{Error, Result};

/// Neighbor search radius, meters.
pub const NEIGHBOR_RANGE: f64 = 120.0;

/// Track indices filling the six slots (v0..v5) of `target` at `step`.
pub fn neighbor_tracks(scene: &TrafficScene, target: usize, step: usize) -> Result<[Option<usize>; NUM_SLOTS]> {
    let me = scene
        .tracks
        .get(target)
        .and_then(|t| t.point_at(step))
        .ok_or_else(|| Error::InvalidArgument(format!("track {target} has no point at step {step}")))?;
    let mut best: [Option<(usize, f64)>; NUM_SLOTS] = [None; NUM_SLOTS];
    for (j, track) in scene.tracks.iter().enumerate() {
        if j == target {
            continue;
        }
        let Some(p) = track.point_at(step) else {
            continue;
        };
        // 0 = left, 1 = same, 2 = right.
        let side = if p.lane + 1 == me.lane {
            0
        } else if p.lane == me.lane {
            1
        } else if p.lane == me.lane + 1 {
            2
        } else {
            continue;
        };
        let along = scene.station_delta(me.station, p.station);
        let across = p.offset - me.offset;
        let dist = along.hypot(across);
        if dist > NEIGHBOR_RANGE {
            continue;
        }
        let slot = 2 * side + usize::from(along < 0.0);
        if best[slot].is_none_or(|(_, d)| along.abs() < d) {
            best[slot] = Some((j, along.abs()));
        }
    }
    Ok(best.map(|b| b.map(|(j, _)| j)))
}

/// Six-slot neighborhood of `target` at `step`, in world coordinates.
pub fn extract_neighborhood(scene: &TrafficScene, target: usize, step: usize) -> Result<[NeighborObservation; NUM_SLOTS]> {
    let slots = neighbor_tracks(scene, target, step)?;
    Ok(slots.map(|s| match s {
        Some(j) => NeighborObservation::present(scene.tracks[j].point_at(step).expect("checked above").state),
        None => NeighborObservation::ABSENT,
    }))
}

/// Neighbor slot assignments for every track and step of a scene.
#[derive(Debug, Clone)]
pub struct SceneIndex {
    slots: Vec<Vec<[Option<usize>; NUM_SLOTS]>>,
}

impl SceneIndex {
    pub fn build(scene: &TrafficScene) -> Result<Self> {
        let slots = scene
            .tracks
            .iter()
            .enumerate()
            .map(|(i, t)| t.points.iter().map(|p| neighbor_tracks(scene, i, p.step)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(SceneIndex { slots })
    }

    pub fn neighborhood(&self, scene: &TrafficScene, target: usize, step: usize) -> Option<[NeighborObservation; NUM_SLOTS]> {
        let track = scene.tracks.get(target)?;
        let slots = self.slots.get(target)?.get(step.checked_sub(track.start_step())?)?;
        Some(slots.map(|s| match s {
            Some(j) => NeighborObservation::present(scene.tracks[j].point_at(step).expect("indexed").state),
            None => NeighborObservation::ABSENT,
        }))
    }
}
