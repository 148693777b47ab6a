use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vector;

/// Inverted-dropout mask over the hidden units of one sequence.
///
/// Entries are exactly `0` or `1 / keep_probability`, and the same mask is
/// applied at every step of the sequence it was drawn for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutMask {
    pub keep_probability: f64,
    pub mask: Vector,
}

pub fn sample_dropout_mask(hidden_size: usize, keep_probability: f64, seed: u64) -> Result<DropoutMask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_mask_from(hidden_size, keep_probability, &mut rng)
}

pub(crate) fn dropout_mask_from<R: Rng>(hidden_size: usize, keep_probability: f64, rng: &mut R) -> Result<DropoutMask> {
    if !(keep_probability > 0.0 && keep_probability <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep probability must lie in (0, 1], got {keep_probability}"
        )));
    }
    let scale = 1.0 / keep_probability;
    let mask = (0..hidden_size)
        .map(|_| if rng.random::<f64>() < keep_probability { scale } else { 0.0 })
        .collect();
    Ok(DropoutMask { keep_probability, mask })
}
