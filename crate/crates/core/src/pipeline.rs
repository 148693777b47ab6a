//! Model-kind dispatch shared by the command line and the grid runner.

use serde::{Deserialize, Serialize};

use crate::data::{Maneuver, Sample};
use crate::error::{Error, Result};
use crate::eval::ConfusionCounts;
use crate::hmm::{self, BaumWelchConfig, HmmClassifier, StateSelection, DEFAULT_STATE_CANDIDATES};
use crate::models::{
    predict_distributions, predict_maneuver, train_model, ArchConfig, LaneSrnn, ManeuverDistribution, ModelKind, SingleFactorSrnn,
    SingleLstm, TrainingConfig, TrainingReport,
};
use crate::seed;

/// Everything needed to train any of the four model kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub arch: ArchConfig,
    pub training: TrainingConfig,
    pub baum_welch: BaumWelchConfig,
    pub hmm_state_candidates: Vec<usize>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            arch: ArchConfig::default(),
            training: TrainingConfig::default(),
            baum_welch: BaumWelchConfig::default(),
            hmm_state_candidates: DEFAULT_STATE_CANDIDATES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum TrainedModel {
    Hmm(HmmClassifier),
    SingleLstm(SingleLstm),
    SingleFactorSrnn(SingleFactorSrnn),
    LaneSrnn(LaneSrnn),
}

/// Training diagnostics for either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainingSummary {
    Neural(TrainingReport),
    Hmm(StateSelection),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Hmm(_) => ModelKind::Hmm,
            TrainedModel::SingleLstm(_) => ModelKind::SingleLstm,
            TrainedModel::SingleFactorSrnn(_) => ModelKind::SingleFactorSrnn,
            TrainedModel::LaneSrnn(_) => ModelKind::LaneSrnn,
        }
    }

    /// Distributions for prepared (normalized, standardized) samples of equal length.
    pub fn predict(&self, samples: &[Sample]) -> Result<Vec<ManeuverDistribution>> {
        match self {
            TrainedModel::Hmm(c) => samples
                .iter()
                .map(|s| Ok(hmm::hmm_classify(c, &hmm::sample_observations(s))?.1))
                .collect(),
            TrainedModel::SingleLstm(m) => predict_distributions(m, samples),
            TrainedModel::SingleFactorSrnn(m) => predict_distributions(m, samples),
            TrainedModel::LaneSrnn(m) => predict_distributions(m, samples),
        }
    }

    pub fn predict_labels(&self, samples: &[Sample]) -> Result<Vec<Maneuver>> {
        Ok(self.predict(samples)?.iter().map(predict_maneuver).collect())
    }

    pub fn evaluate(&self, samples: &[Sample]) -> Result<ConfusionCounts> {
        let truth: Vec<Maneuver> = samples.iter().map(|s| s.label).collect();
        ConfusionCounts::from_predictions(&truth, &self.predict_labels(samples)?)
    }
}

/// Trains a fresh model of `kind` on prepared, balanced training samples.
pub fn train_kind(kind: ModelKind, train: &[Sample], settings: &ModelSettings, seed: u64) -> Result<(TrainedModel, TrainingSummary)> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let init_seed = seed::derive(seed, "init");
    let training = TrainingConfig {
        seed: seed::derive(seed, "train"),
        ..settings.training.clone()
    };
    Ok(match kind {
        ModelKind::Hmm => {
            let (clf, sel) = hmm::fit_classifier(train, &settings.hmm_state_candidates, seed, &settings.baum_welch)?;
            (TrainedModel::Hmm(clf), TrainingSummary::Hmm(sel))
        }
        ModelKind::SingleLstm => {
            let mut m = SingleLstm::new(settings.arch, init_seed);
            let report = train_model(&mut m, train, &training)?;
            (TrainedModel::SingleLstm(m), TrainingSummary::Neural(report))
        }
        ModelKind::SingleFactorSrnn => {
            let mut m = SingleFactorSrnn::new(settings.arch, init_seed);
            let report = train_model(&mut m, train, &training)?;
            (TrainedModel::SingleFactorSrnn(m), TrainingSummary::Neural(report))
        }
        ModelKind::LaneSrnn => {
            let mut m = LaneSrnn::new(settings.arch, init_seed);
            let report = train_model(&mut m, train, &training)?;
            (TrainedModel::LaneSrnn(m), TrainingSummary::Neural(report))
        }
    })
}
