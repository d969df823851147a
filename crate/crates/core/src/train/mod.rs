//! Optimisation, metrics, training runs, evaluation and ablations.

pub mod ablation;
pub mod adam;
pub mod evaluate;
pub mod metrics;
pub mod trainer;

pub use ablation::{run_ablation, AblationRow, AblationTable, ABLATION_ORDER};
pub use adam::AdamState;
pub use evaluate::{evaluate, evaluate_samples, ImageMetrics, MetricsReport, MetricsSummary, SampleRecord, Stat};
pub use metrics::{error_map, mse, nmse, psnr, psnr_capped, ssim};
pub use trainer::{make_batch, train, train_on, train_with, EpochSummary, TrainConfig, TrainOutcome};
