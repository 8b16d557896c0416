//! Datasets, training loops and paired experiments.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod train;

pub use config::{build_network, lr_at, DataSource, TrainConfig};
pub use dataset::{gen_parity, load_idx, Dataset, Samples};
pub use experiment::{
    parity_config, parity_success_experiment, relative_improvement, run_paired_experiment, ComparisonSummary,
    PairedOutcome, ParitySuccess, SeedComparison,
};
pub use train::{
    run_id, train, write_metrics_csv, MetricsRecord, RunRecords, SigmaCheckpoint, TrainRun, METRICS_HEADER,
};
