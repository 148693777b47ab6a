use serde::{Deserialize, Serialize};

use super::types::{NeighborObservation, Sample, VehicleState, NUM_SLOTS, STATE_DIM};
use crate::error::{Error, Result};

pub const SCALE_FLOOR: f64 = 1e-8;

/// Per-feature centering and scaling statistics. Row `j < 6` covers neighbor
/// slot `v_j`, row 6 the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: [[f64; STATE_DIM]; NUM_SLOTS + 1],
    pub scales: [[f64; STATE_DIM]; NUM_SLOTS + 1],
}

impl Standardizer {
    pub fn identity() -> Self {
        Standardizer {
            means: [[0.0; STATE_DIM]; NUM_SLOTS + 1],
            scales: [[1.0; STATE_DIM]; NUM_SLOTS + 1],
        }
    }

    /// Population statistics over every step of every present vehicle.
    pub fn fit(samples: &[Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("standardizer training set"));
        }
        let mut count = [0usize; NUM_SLOTS + 1];
        let mut sum = [[0.0; STATE_DIM]; NUM_SLOTS + 1];
        let mut add = |row: usize, v: &VehicleState, count: &mut [usize; NUM_SLOTS + 1]| {
            count[row] += 1;
            for (s, x) in sum[row].iter_mut().zip(v.to_array()) {
                *s += x;
            }
        };
        for s in samples {
            for v in &s.target_history {
                add(NUM_SLOTS, v, &mut count);
            }
            for (j, slot) in s.neighbor_histories.iter().enumerate() {
                for o in slot.iter().filter(|o| o.present) {
                    add(j, &o.state, &mut count);
                }
            }
        }
        let mut means = [[0.0; STATE_DIM]; NUM_SLOTS + 1];
        for row in 0..=NUM_SLOTS {
            if count[row] > 0 {
                for d in 0..STATE_DIM {
                    means[row][d] = sum[row][d] / count[row] as f64;
                }
            }
        }
        let mut sq = [[0.0; STATE_DIM]; NUM_SLOTS + 1];
        let mut add_sq = |row: usize, v: &VehicleState| {
            for (d, x) in v.to_array().into_iter().enumerate() {
                let c = x - means[row][d];
                sq[row][d] += c * c;
            }
        };
        for s in samples {
            for v in &s.target_history {
                add_sq(NUM_SLOTS, v);
            }
            for (j, slot) in s.neighbor_histories.iter().enumerate() {
                for o in slot.iter().filter(|o| o.present) {
                    add_sq(j, &o.state);
                }
            }
        }
        let mut scales = [[1.0; STATE_DIM]; NUM_SLOTS + 1];
        for row in 0..=NUM_SLOTS {
            if count[row] > 0 {
                for d in 0..STATE_DIM {
                    scales[row][d] = (sq[row][d] / count[row] as f64).sqrt().max(SCALE_FLOOR);
                }
            }
        }
        Ok(Standardizer { means, scales })
    }

    fn standardize(&self, row: usize, v: &VehicleState) -> VehicleState {
        let mut a = v.to_array();
        for (d, x) in a.iter_mut().enumerate() {
            *x = (*x - self.means[row][d]) / self.scales[row][d];
        }
        VehicleState::from(a)
    }

    /// Standardized copy; absent slots stay zero and indicators untouched.
    pub fn apply(&self, sample: &Sample) -> Sample {
        let mut out = sample.clone();
        for v in out.target_history.iter_mut() {
            *v = self.standardize(NUM_SLOTS, v);
        }
        for (j, slot) in out.neighbor_histories.iter_mut().enumerate() {
            for o in slot.iter_mut() {
                *o = if o.present {
                    NeighborObservation::present(self.standardize(j, &o.state))
                } else {
                    NeighborObservation::ABSENT
                };
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.means.iter().chain(&self.scales).flatten().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::types::{HorizonConfig, Maneuver};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng) -> VehicleState {
        VehicleState::from(std::array::from_fn::<f64, 8, _>(|d| rng.random_range(-10.0..10.0) * (d + 1) as f64 + 3.0))
    }

    fn random_samples(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = HorizonConfig::new(1.0, 1.0).unwrap();
        (0..n)
            .map(|i| {
                let len = h.history_steps();
                let target_history = (0..len).map(|_| random_state(&mut rng)).collect();
                let neighbor_histories = std::array::from_fn(|_| {
                    (0..len)
                        .map(|_| {
                            if rng.random_bool(0.6) {
                                NeighborObservation::present(random_state(&mut rng))
                            } else {
                                NeighborObservation::ABSENT
                            }
                        })
                        .collect()
                });
                Sample {
                    horizon: h,
                    label: Maneuver::ALL[i % 3],
                    target_history,
                    neighbor_histories,
                    source_track_id: i as u64,
                    source_time: 0,
                }
            })
            .collect()
    }

    #[test]
    fn training_statistics_are_centered_and_scaled() {
        let samples = random_samples(40, 3);
        let st = Standardizer::fit(&samples).unwrap();
        let std: Vec<Sample> = samples.iter().map(|s| st.apply(s)).collect();
        let again = Standardizer::fit(&std).unwrap();
        for row in 0..=NUM_SLOTS {
            for d in 0..STATE_DIM {
                assert!(again.means[row][d].abs() < 1e-8, "row {row} dim {d}: {}", again.means[row][d]);
                assert!((again.scales[row][d] - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn absent_slots_stay_zero() {
        let samples = random_samples(10, 4);
        let st = Standardizer::fit(&samples).unwrap();
        for s in &samples {
            let z = st.apply(s);
            z.validate().unwrap();
            for (a, b) in s.neighbor_histories.iter().flatten().zip(z.neighbor_histories.iter().flatten()) {
                assert_eq!(a.present, b.present);
            }
        }
    }

    #[test]
    fn constant_feature_is_floored_to_zero() {
        let mut samples = random_samples(5, 5);
        for s in samples.iter_mut() {
            s.target_history.iter_mut().for_each(|v| v.n_left = 2.0);
        }
        let st = Standardizer::fit(&samples).unwrap();
        assert_eq!(st.scales[NUM_SLOTS][6], SCALE_FLOOR);
        assert!(st.apply(&samples[0]).target_history.iter().all(|v| v.n_left == 0.0));
    }

    #[test]
    fn uses_fitted_not_own_statistics() {
        let train = random_samples(20, 6);
        let eval = random_samples(1, 7);
        let st = Standardizer::fit(&train).unwrap();
        let own = Standardizer::fit(&eval).unwrap();
        assert_ne!(st.apply(&eval[0]), own.apply(&eval[0]));
        let x = eval[0].target_history[0].px;
        let expect = (x - st.means[NUM_SLOTS][0]) / st.scales[NUM_SLOTS][0];
        assert_eq!(st.apply(&eval[0]).target_history[0].px, expect);
    }

    #[test]
    fn empty_fit_fails() {
        assert!(Standardizer::fit(&[]).is_err());
    }
}
