use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{HorizonConfig, Maneuver};
use crate::error::{Error, Result};
use crate::models::ModelKind;

/// Rows are true classes, columns predicted classes, both in
/// `(left, right, none)` order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionCounts {
    pub fn new(counts: [[u64; 3]; 3]) -> Self {
        ConfusionCounts { counts }
    }

    pub fn from_predictions(truth: &[Maneuver], predicted: &[Maneuver]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::dim("predictions", truth.len(), predicted.len()));
        }
        let mut c = ConfusionCounts::default();
        for (t, p) in truth.iter().zip(predicted) {
            c.add(*t, *p);
        }
        Ok(c)
    }

    pub fn add(&mut self, truth: Maneuver, predicted: Maneuver) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    /// Number of samples whose true class is `m`.
    pub fn true_count(&self, m: Maneuver) -> u64 {
        self.counts[m.index()].iter().sum()
    }

    pub fn predicted_count(&self, m: Maneuver) -> u64 {
        self.counts.iter().map(|row| row[m.index()]).sum()
    }

    pub fn true_positives(&self, m: Maneuver) -> u64 {
        self.counts[m.index()][m.index()]
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

/// `(tp / (tp + fp), tp / (tp + fn))`; a zero denominator yields NaN.
pub fn precision_recall(counts: &ConfusionCounts, m: Maneuver) -> (f64, f64) {
    let tp = counts.true_positives(m);
    (ratio(tp, counts.predicted_count(m)), ratio(tp, counts.true_count(m)))
}

/// Mean per-class recall.
pub fn balanced_accuracy(counts: &ConfusionCounts) -> Result<f64> {
    let mut sum = 0.0;
    for m in Maneuver::ALL {
        if counts.true_count(m) == 0 {
            return Err(Error::UndefinedMetric(format!("balanced accuracy: no true '{m}' samples")));
        }
        sum += precision_recall(counts, m).1;
    }
    Ok(sum / 3.0)
}

/// Accuracy restricted to samples whose true class is a lane change.
pub fn positive_lane_change_accuracy(counts: &ConfusionCounts) -> Result<f64> {
    let (l, r) = (Maneuver::Left, Maneuver::Right);
    let den = counts.true_count(l) + counts.true_count(r);
    if den == 0 {
        return Err(Error::UndefinedMetric("positive lane-change accuracy: no true lane changes".into()));
    }
    Ok((counts.true_positives(l) + counts.true_positives(r)) as f64 / den as f64)
}

pub fn overall_accuracy(counts: &ConfusionCounts) -> Result<f64> {
    if counts.total() == 0 {
        return Err(Error::UndefinedMetric("accuracy: no samples".into()));
    }
    Ok(counts.trace() as f64 / counts.total() as f64)
}

pub const CSV_HEADER: &str = "model,t_h_seconds,t_f_seconds,precision_left,recall_left,precision_right,recall_right,precision_none,recall_none,accuracy,balanced_accuracy,plc_accuracy";

/// One row of the results table. Undefined metrics are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub history_seconds: f64,
    pub future_seconds: f64,
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub plc_accuracy: f64,
}

impl MetricsReport {
    pub fn from_counts(model: ModelKind, horizon: &HorizonConfig, counts: &ConfusionCounts) -> Self {
        let pr = Maneuver::ALL.map(|m| precision_recall(counts, m));
        MetricsReport {
            model: model.name().to_string(),
            history_seconds: horizon.history_seconds,
            future_seconds: horizon.future_seconds,
            precision: pr.map(|p| p.0),
            recall: pr.map(|p| p.1),
            accuracy: overall_accuracy(counts).unwrap_or(f64::NAN),
            balanced_accuracy: balanced_accuracy(counts).unwrap_or(f64::NAN),
            plc_accuracy: positive_lane_change_accuracy(counts).unwrap_or(f64::NAN),
        }
    }

    pub fn metrics(&self) -> [f64; 9] {
        [
            self.precision[0],
            self.recall[0],
            self.precision[1],
            self.recall[1],
            self.precision[2],
            self.recall[2],
            self.accuracy,
            self.balanced_accuracy,
            self.plc_accuracy,
        ]
    }

    /// Column-wise mean over `rows`, skipping NaN entries. Horizon fields are
    /// NaN and print as `all`.
    pub fn average(model: &str, rows: &[MetricsReport]) -> Self {
        let mut sum = [0.0; 9];
        let mut n = [0usize; 9];
        for r in rows {
            for (i, x) in r.metrics().into_iter().enumerate() {
                if !x.is_nan() {
                    sum[i] += x;
                    n[i] += 1;
                }
            }
        }
        let m: [f64; 9] = std::array::from_fn(|i| if n[i] == 0 { f64::NAN } else { sum[i] / n[i] as f64 });
        MetricsReport {
            model: model.to_string(),
            history_seconds: f64::NAN,
            future_seconds: f64::NAN,
            precision: [m[0], m[2], m[4]],
            recall: [m[1], m[3], m[5]],
            accuracy: m[6],
            balanced_accuracy: m[7],
            plc_accuracy: m[8],
        }
    }

    pub fn csv_row(&self) -> String {
        let num = |x: f64| if x.is_nan() { "nan".to_string() } else { format!("{x:.6}") };
        let secs = |x: f64| if x.is_nan() { "all".to_string() } else { format!("{x}") };
        let mut s = format!("{},{},{}", self.model, secs(self.history_seconds), secs(self.future_seconds));
        for x in self.metrics() {
            let _ = write!(s, ",{}", num(x));
        }
        s
    }
}
