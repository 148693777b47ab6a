use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_inputs, predict_labels, sample_masks, SequenceModel};
use crate::data::{Sample, STEP_SECONDS};
use crate::error::{Error, Result};
use crate::eval::metrics::{balanced_accuracy, ConfusionCounts};
use crate::nn::loss::weighted_xent_batch;
use crate::nn::{clip_global_norm, make_exp_weights, zeros_like, AdamState, DEFAULT_LEARNING_RATE};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Share of the (shuffled) training set held out for model selection.
    pub validation_fraction: f64,
    pub keep_probability: f64,
    pub clip_norm: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            validation_fraction: 0.2,
            keep_probability: 0.5,
            clip_norm: 5.0,
            patience: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted loss per training sequence.
    pub loss: f64,
    /// NaN when there is no validation set or it lacks a class.
    pub validation_balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub train_size: usize,
    pub validation_size: usize,
}

/// Mean weighted loss over a batch and its gradient with respect to every
/// model parameter. `masks` are per-cell dropout masks (see
/// [`SequenceModel::forward_batch`]).
pub fn batch_loss_and_grads<M: SequenceModel>(model: &M, batch: &[&Sample], masks: Option<Vec<Vec<f64>>>) -> Result<(f64, M)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let inputs = batch_inputs(batch)?;
    let (logits, trace) = model.forward_batch(&inputs, masks)?;
    let labels: Vec<usize> = batch.iter().map(|s| s.label.index()).collect();
    let weights = make_exp_weights(inputs.len(), STEP_SECONDS);
    let scale = 1.0 / batch.len() as f64;
    let (losses, d_logits) = weighted_xent_batch(&logits, &labels, &weights, scale)?;
    let mut grads = zeros_like(model);
    model.backward_batch(&inputs, &trace, &d_logits, &mut grads)?;
    Ok((losses.iter().sum::<f64>() * scale, grads))
}

fn validation_score<M: SequenceModel>(model: &M, validation: &[Sample]) -> Result<f64> {
    if validation.is_empty() {
        return Ok(f64::NAN);
    }
    let predicted = predict_labels(model, validation)?;
    let truth: Vec<_> = validation.iter().map(|s| s.label).collect();
    Ok(balanced_accuracy(&ConfusionCounts::from_predictions(&truth, &predicted)?).unwrap_or(f64::NAN))
}

/// Mini-batch ADAM on the time-weighted loss. When a validation set exists
/// the parameters of the best validation epoch are kept.
pub fn train_model<M: SequenceModel>(model: &mut M, samples: &[Sample], cfg: &TrainingConfig) -> Result<TrainingReport> {
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(Error::InvalidArgument(format!("validation fraction must lie in [0, 1), got {}", cfg.validation_fraction)));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "holdout")));
    let n_val = (cfg.validation_fraction * samples.len() as f64).floor() as usize;
    let mut train_idx = order[..samples.len() - n_val].to_vec();
    let validation: Vec<Sample> = order[samples.len() - n_val..].iter().map(|&i| samples[i].clone()).collect();
    if train_idx.is_empty() {
        return Err(Error::Empty("training set after validation holdout"));
    }

    let mut adam = AdamState::new(model.num_params(), cfg.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "shuffle"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "dropout"));
    let mut report = TrainingReport {
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        train_size: train_idx.len(),
        validation_size: validation.len(),
    };
    let mut best: Option<(f64, M)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let masks = if cfg.keep_probability < 1.0 {
                Some(sample_masks(model.num_cells(), batch.len(), model.hidden_size(), cfg.keep_probability, &mut dropout_rng)?)
            } else {
                None
            };
            let (loss, mut grads) = batch_loss_and_grads(model, &batch, masks)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            total += loss * batch.len() as f64;
            clip_global_norm(&mut grads.param_slices_mut(), cfg.clip_norm);
            adam.update(&mut model.param_slices_mut(), &grads.param_slices())?;
        }
        let loss = total / train_idx.len() as f64;
        let score = validation_score(model, &validation)?;
        log::info!("{} epoch {epoch}: loss {loss:.6} validation balanced accuracy {score:.4}", model.kind());
        report.epochs.push(EpochRecord {
            epoch,
            loss,
            validation_balanced_accuracy: score,
        });
        if validation.is_empty() {
            report.best_epoch = Some(epoch);
            continue;
        }
        if best.as_ref().is_none_or(|(b, _)| score > *b || b.is_nan() && !score.is_nan()) {
            best = Some((score, model.clone()));
            report.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(report)
}
