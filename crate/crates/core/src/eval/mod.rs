//! Confusion-matrix metrics and the horizon-grid experiment runner.

pub mod grid;
pub mod metrics;

pub use grid::{run_grid, run_grid_with, samples_for, GridConfig, GridReport};
pub use metrics::{
    balanced_accuracy, overall_accuracy, positive_lane_change_accuracy, precision_recall, ConfusionCounts, MetricsReport,
    CSV_HEADER,
};
