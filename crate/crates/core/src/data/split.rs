use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::types::{Maneuver, Sample};
use crate::error::{Error, Result};

pub const TRAIN_FRACTION: f64 = 0.6;

pub fn class_counts(samples: &[Sample]) -> [usize; Maneuver::COUNT] {
    let mut c = [0; Maneuver::COUNT];
    for s in samples {
        c[s.label.index()] += 1;
    }
    c
}

/// Downsamples every class to the minority count. Survivors keep their
/// original relative order.
pub fn balance_classes(samples: &[Sample], seed: u64) -> Result<Vec<Sample>> {
    let counts = class_counts(samples);
    if let Some(m) = Maneuver::ALL.iter().find(|m| counts[m.index()] == 0) {
        return Err(Error::InvalidArgument(format!("cannot balance: no '{m}' samples")));
    }
    let target = *counts.iter().min().expect("three classes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; samples.len()];
    for m in Maneuver::ALL {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == m).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..target] {
            keep[i] = true;
        }
    }
    Ok(samples.iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s.clone()).collect())
}

/// Track-level split: every sample of a source track lands on one side.
/// Tracks are shuffled, then placed largest first on whichever side is further
/// below its share.
pub fn split_train_eval(samples: &[Sample], seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let mut sizes: BTreeMap<u64, usize> = BTreeMap::new();
    for s in samples {
        *sizes.entry(s.source_track_id).or_default() += 1;
    }
    if sizes.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 source tracks to split, got {}", sizes.len())));
    }
    let mut tracks: Vec<(u64, usize)> = sizes.into_iter().collect();
    tracks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    tracks.sort_by_key(|t| std::cmp::Reverse(t.1));
    let total = samples.len() as f64;
    let (want_train, want_eval) = (TRAIN_FRACTION * total, (1.0 - TRAIN_FRACTION) * total);
    let (mut n_train, mut n_eval) = (0usize, 0usize);
    let mut to_train = BTreeMap::new();
    for (id, n) in tracks {
        let train = want_train - n_train as f64 >= want_eval - n_eval as f64;
        if train {
            n_train += n;
        } else {
            n_eval += n;
        }
        to_train.insert(id, train);
    }
    let (train, eval): (Vec<&Sample>, Vec<&Sample>) = samples.iter().partition(|s| to_train[&s.source_track_id]);
    Ok((train.into_iter().cloned().collect(), eval.into_iter().cloned().collect()))
}
