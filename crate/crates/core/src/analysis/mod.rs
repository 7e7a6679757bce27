//! Evaluation metrics, activation diagnostics and filter visualization.

pub mod activation;
pub mod eval;
pub mod filters;
pub mod metrics;

pub use activation::{activation_rate, gini, ActivationProfile};
pub use eval::*;
pub use filters::{export_filter_grid, filter_grid};
pub use metrics::{average_predictions, mean_class_accuracy, EvalReport};
