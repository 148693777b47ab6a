//! Sequence classifiers over [`Sample`] histories: the lane-based structural
//! RNN and the two recurrent baselines, plus the shared training loop.

mod lane_srnn;
mod single;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use lane_srnn::LaneSrnn;
pub use single::{SingleFactorSrnn, SingleLstm};
pub use train::{batch_loss_and_grads, train_model, EpochRecord, TrainingConfig, TrainingReport};

use crate::data::{Maneuver, Sample, STEP_FEATURES};
use crate::error::{Error, Result};
use crate::math::{argmax, softmax, Matrix, Vector};
use crate::nn::dropout::dropout_mask_from;
use crate::nn::{LinearHead, LstmTrace, Parameterized};

pub const DEFAULT_HIDDEN_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Hmm,
    SingleLstm,
    SingleFactorSrnn,
    LaneSrnn,
}

impl ModelKind {
    /// Report order.
    pub const ALL: [ModelKind; 4] = [ModelKind::Hmm, ModelKind::SingleLstm, ModelKind::SingleFactorSrnn, ModelKind::LaneSrnn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hmm => "hmm",
            ModelKind::SingleLstm => "single_lstm",
            ModelKind::SingleFactorSrnn => "single_factor_srnn",
            ModelKind::LaneSrnn => "lane_srnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind '{s}' (expected hmm, single_lstm, single_factor_srnn or lane_srnn)")))
    }
}

/// Architecture settings shared by the recurrent models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden_size: usize,
    pub layer_norm: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            hidden_size: DEFAULT_HIDDEN_SIZE,
            layer_norm: true,
        }
    }
}

/// Class probabilities in `(left, right, none)` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverDistribution {
    pub probabilities: [f64; Maneuver::COUNT],
}

impl ManeuverDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        let p = softmax(logits);
        ManeuverDistribution {
            probabilities: [p[0], p[1], p[2]],
        }
    }

    pub fn probability(&self, m: Maneuver) -> f64 {
        self.probabilities[m.index()]
    }
}

/// Most probable maneuver; ties resolve to the earlier of left, right, none.
pub fn predict_maneuver(dist: &ManeuverDistribution) -> Maneuver {
    Maneuver::from_index(argmax(&dist.probabilities)).expect("three classes")
}

/// A recurrent classifier run on batches of equal-length sequences.
pub trait SequenceModel: Parameterized + Clone + Send + Sync {
    type Trace;

    fn kind(&self) -> ModelKind;
    fn hidden_size(&self) -> usize;
    /// Number of LSTM cells, each of which gets its own dropout mask.
    fn num_cells(&self) -> usize;

    /// `inputs[k]` is `B × 62` (see [`Sample::step_features`]); `masks`, when
    /// given, holds one `B × H` mask per cell. Returns per-step logits `B × 3`.
    fn forward_batch(&self, inputs: &[Matrix], masks: Option<Vec<Vec<f64>>>) -> Result<(Vec<Matrix>, Self::Trace)>;

    /// Adds the gradient of the loss into `grads` given dLoss/dlogits per step.
    fn backward_batch(&self, inputs: &[Matrix], trace: &Self::Trace, d_logits: &[Matrix], grads: &mut Self) -> Result<()>;

    /// Single-sample forward pass. With `training` set, dropout masks are drawn
    /// from `seed`.
    fn forward_sample(&self, sample: &Sample, training: bool, keep_probability: f64, seed: u64) -> Result<(Vec<Vector>, ManeuverDistribution)> {
        sample.validate()?;
        let inputs = batch_inputs(&[sample])?;
        let masks = if training {
            Some(sample_masks(self.num_cells(), 1, self.hidden_size(), keep_probability, &mut ChaCha8Rng::seed_from_u64(seed))?)
        } else {
            None
        };
        let (logits, _) = self.forward_batch(&inputs, masks)?;
        let steps: Vec<Vector> = logits.iter().map(|m| Vector::from(m.row(0))).collect();
        let dist = ManeuverDistribution::from_logits(steps.last().ok_or(Error::Empty("sample history"))?);
        Ok((steps, dist))
    }
}

/// Inference-mode distributions for many samples of equal length.
pub fn predict_distributions<M: SequenceModel>(model: &M, samples: &[Sample]) -> Result<Vec<ManeuverDistribution>> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CHUNK) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let inputs = batch_inputs(&refs)?;
        let (logits, _) = model.forward_batch(&inputs, None)?;
        let last = logits.last().ok_or(Error::Empty("sample history"))?;
        out.extend((0..chunk.len()).map(|r| ManeuverDistribution::from_logits(last.row(r))));
    }
    Ok(out)
}

pub fn predict_labels<M: SequenceModel>(model: &M, samples: &[Sample]) -> Result<Vec<Maneuver>> {
    Ok(predict_distributions(model, samples)?.iter().map(predict_maneuver).collect())
}

/// Per-step input matrices `B × 62` for samples of equal length.
pub fn batch_inputs(samples: &[&Sample]) -> Result<Vec<Matrix>> {
    let steps = samples.first().map_or(0, |s| s.len());
    let mut inputs = vec![Matrix::zeros(samples.len(), STEP_FEATURES); steps];
    for (r, s) in samples.iter().enumerate() {
        if s.len() != steps {
            return Err(Error::dim("batch sequence length", steps, s.len()));
        }
        for (k, m) in inputs.iter_mut().enumerate() {
            s.step_features(k, m.row_mut(r));
        }
    }
    Ok(inputs)
}

pub(crate) fn sample_masks(cells: usize, batch: usize, hidden: usize, keep: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    (0..cells)
        .map(|_| {
            let mut m = Vec::with_capacity(batch * hidden);
            for _ in 0..batch {
                m.extend_from_slice(&dropout_mask_from(hidden, keep, rng)?.mask);
            }
            Ok(m)
        })
        .collect()
}

/// Per-step logits of `head` over the hidden outputs of `trace`.
pub(crate) fn head_forward(head: &LinearHead, trace: &LstmTrace) -> Result<Vec<Matrix>> {
    (0..trace.len()).map(|k| head.forward_batch(trace.hidden(k), trace.batch())).collect()
}

/// Head backward for every step; returns dLoss/dh per step.
pub(crate) fn head_backward(head: &LinearHead, trace: &LstmTrace, d_logits: &[Matrix], grads: &mut LinearHead) -> Result<Vec<Vec<f64>>> {
    if d_logits.len() != trace.len() {
        return Err(Error::dim("logit gradients", trace.len(), d_logits.len()));
    }
    Ok((0..trace.len()).map(|k| head.backward_batch(trace.hidden(k), &d_logits[k], grads)).collect())
}

pub(crate) fn split_masks(masks: Option<Vec<Vec<f64>>>, cells: usize) -> Result<Vec<Option<Vec<f64>>>> {
    match masks {
        None => Ok(vec![None; cells]),
        Some(m) if m.len() == cells => Ok(m.into_iter().map(Some).collect()),
        Some(m) => Err(Error::dim("dropout masks", cells, m.len())),
    }
}
