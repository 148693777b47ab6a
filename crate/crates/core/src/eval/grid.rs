use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{MetricsReport, CSV_HEADER};
use crate::data::{prepare, HorizonConfig, PreparedData, Sample};
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::pipeline::{train_kind, ModelSettings};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub models: Vec<ModelKind>,
    pub horizons: Vec<HorizonConfig>,
    pub settings: ModelSettings,
    pub seed: u64,
    /// Worker threads for the independent training jobs; 0 means one per
    /// available processor.
    pub workers: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            models: ModelKind::ALL.to_vec(),
            horizons: HorizonConfig::grid(),
            settings: ModelSettings::default(),
            seed: 0,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    /// Model-major, then horizon in grid order.
    pub rows: Vec<MetricsReport>,
    /// One per model, averaged over its rows.
    pub averages: Vec<MetricsReport>,
}

impl GridReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in self.rows.iter().chain(&self.averages) {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn row(&self, model: ModelKind, horizon: &HorizonConfig) -> Option<&MetricsReport> {
        self.rows.iter().find(|r| {
            r.model == model.name() && r.history_seconds == horizon.history_seconds && r.future_seconds == horizon.future_seconds
        })
    }
}

/// Samples of `corpus` recorded for `horizon`.
pub fn samples_for(corpus: &[Sample], horizon: &HorizonConfig) -> Vec<Sample> {
    corpus.iter().filter(|s| s.horizon == *horizon).cloned().collect()
}

fn with_setting(h: &HorizonConfig, e: Error) -> Error {
    Error::InvalidArgument(format!("setting {h}: {e}"))
}

/// In-memory form of [`run_grid_with`].
pub fn run_grid(corpus: &[Sample], cfg: &GridConfig) -> Result<GridReport> {
    run_grid_with(|h| Ok(samples_for(corpus, h)), cfg)
}

/// For every horizon: split, balance, standardize, train each model from
/// scratch and score it on the unbalanced evaluation side. `load` supplies
/// the raw samples of one setting; settings are processed one at a time and
/// the model jobs of a setting run on the worker pool. Output is independent
/// of the worker count.
pub fn run_grid_with(load: impl Fn(&HorizonConfig) -> Result<Vec<Sample>>, cfg: &GridConfig) -> Result<GridReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let mut table: Vec<Vec<MetricsReport>> = vec![Vec::with_capacity(cfg.horizons.len()); cfg.models.len()];
    for (i, h) in cfg.horizons.iter().enumerate() {
        let samples = load(h)?;
        if samples.is_empty() {
            return Err(Error::MissingSetting {
                history_seconds: h.history_seconds,
                future_seconds: h.future_seconds,
            });
        }
        let setting_seed = seed::derive_index(cfg.seed, i as u64);
        let data: PreparedData = prepare(&samples, setting_seed).map_err(|e| with_setting(h, e))?;
        drop(samples);
        let run = |kind: &ModelKind| -> Result<MetricsReport> {
            log::info!("grid: training {kind} for {h}");
            let (model, _) = train_kind(*kind, &data.train, &cfg.settings, seed::derive(setting_seed, kind.name())).map_err(|e| with_setting(h, e))?;
            let counts = model.evaluate(&data.eval).map_err(|e| with_setting(h, e))?;
            Ok(MetricsReport::from_counts(*kind, h, &counts))
        };
        let rows: Vec<MetricsReport> = pool.install(|| cfg.models.par_iter().map(run).collect::<Result<Vec<_>>>())?;
        for (col, r) in table.iter_mut().zip(rows) {
            col.push(r);
        }
    }
    let averages = cfg.models.iter().zip(&table).map(|(m, rows)| MetricsReport::average(m.name(), rows)).collect();
    Ok(GridReport {
        rows: table.into_iter().flatten().collect(),
        averages,
    })
}
