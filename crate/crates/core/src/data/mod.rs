//! Domain records, the synthetic traffic generator and the sample pipeline:
//! extraction, labeling, frame normalization, standardization, balancing,
//! splitting and the on-disk corpus.

pub mod corpus;
pub mod neighborhood;
pub mod samples;
pub mod scene;
pub mod split;
pub mod standardize;
pub mod types;

pub use corpus::{for_each_sample, read_corpus, write_corpus, CorpusWriter};
pub use neighborhood::{extract_neighborhood, SceneIndex, NEIGHBOR_RANGE};
pub use samples::{extract_samples, frame_normalize, label_maneuver, ExtractConfig};
pub use scene::{generate_scene, GeneratorConfig, LaneChangeEvent, Track, TrackPoint, TrafficScene};
pub use split::{balance_classes, class_counts, split_train_eval};
pub use standardize::Standardizer;
pub use types::*;

use crate::error::Result;
use crate::seed;

/// Generates `num_scenes` scenes (scene `k` seeded from `cfg.seed` and `k`)
/// and extracts samples for each horizon. Track ids are made unique across
/// scenes. Returns one sample list per horizon.
pub fn generate_samples(cfg: &GeneratorConfig, num_scenes: usize, extract: &ExtractConfig, horizons: &[HorizonConfig]) -> Result<Vec<Vec<Sample>>> {
    let mut out = vec![Vec::new(); horizons.len()];
    for k in 0..num_scenes {
        let scene_cfg = GeneratorConfig {
            seed: seed::derive_index(cfg.seed, k as u64),
            ..cfg.clone()
        };
        let mut scene = generate_scene(&scene_cfg)?;
        for t in scene.tracks.iter_mut() {
            t.id += (k as u64) << 32;
        }
        let index = SceneIndex::build(&scene)?;
        for (h, bucket) in horizons.iter().zip(out.iter_mut()) {
            bucket.extend(extract_samples(&scene, &index, h, extract)?);
        }
    }
    Ok(out)
}

/// Training and evaluation sets ready for a model: frame-normalized and
/// standardized with statistics of the balanced training set.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
    pub standardizer: Standardizer,
}

/// Split by track, balance the training side, normalize, fit and apply the
/// standardizer. The evaluation side stays unbalanced.
pub fn prepare(samples: &[Sample], master_seed: u64) -> Result<PreparedData> {
    let (train, eval) = split_train_eval(samples, seed::derive(master_seed, "split"))?;
    let train = balance_classes(&train, seed::derive(master_seed, "balance"))?;
    let train: Vec<Sample> = train.iter().map(frame_normalize).collect();
    let standardizer = Standardizer::fit(&train)?;
    Ok(PreparedData {
        train: train.iter().map(|s| standardizer.apply(s)).collect(),
        eval: eval.iter().map(|s| standardizer.apply(&frame_normalize(s))).collect(),
        standardizer,
    })
}

/// The evaluation side of the split `prepare` makes with `master_seed`,
/// normalized and standardized with `standardizer`.
pub fn evaluation_set(samples: &[Sample], master_seed: u64, standardizer: &Standardizer) -> Result<Vec<Sample>> {
    let (_, eval) = split_train_eval(samples, seed::derive(master_seed, "split"))?;
    Ok(eval.iter().map(|s| standardizer.apply(&frame_normalize(s))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scene_yields_every_label() {
        let h = HorizonConfig::new(1.0, 1.0).unwrap();
        let samples = generate_samples(&GeneratorConfig::default(), 1, &ExtractConfig { stride: 5, none_stride: 10 }, &[h])
            .unwrap()
            .remove(0);
        let counts = class_counts(&samples);
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
        assert!(samples.iter().all(|s| s.validate().is_ok()));
    }

    #[test]
    fn track_ids_are_unique_across_scenes() {
        let cfg = GeneratorConfig {
            duration_seconds: 60.0,
            num_vehicles: 10,
            ..GeneratorConfig::default()
        };
        let h = HorizonConfig::new(1.0, 1.0).unwrap();
        let samples = generate_samples(&cfg, 2, &ExtractConfig { stride: 10, none_stride: 1 }, &[h]).unwrap().remove(0);
        let mut ids: Vec<u64> = samples.iter().map(|s| s.source_track_id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 20);
    }

    #[test]
    fn evaluation_set_matches_prepare() {
        let cfg = GeneratorConfig {
            duration_seconds: 240.0,
            ..GeneratorConfig::default()
        };
        let h = HorizonConfig::new(1.0, 1.0).unwrap();
        let samples = generate_samples(&cfg, 1, &ExtractConfig { stride: 4, none_stride: 10 }, &[h]).unwrap().remove(0);
        let data = prepare(&samples, 3).unwrap();
        assert_eq!(evaluation_set(&samples, 3, &data.standardizer).unwrap(), data.eval);
        let train = class_counts(&data.train);
        assert!(train[0] == train[1] && train[1] == train[2]);
    }
}
