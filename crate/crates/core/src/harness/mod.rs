//! End-to-end driver: datasets, training, compression, metrics, probes.

mod ablation;
mod config;
mod data;
mod pipeline;
mod probes;
mod regression;
mod runtime;
mod train;

use thiserror::Error;

use crate::autograd::AutogradError;
use crate::compression::CompressionError;
use crate::dhspg::DhspgError;
use crate::graph::GraphError;
use crate::partition::PartitionError;

pub use ablation::{run_ablation_dhspg_vs_hspg, AblationRow, AblationTable};
pub use config::{load_graph, ExperimentConfig, SEED_ENV};
pub use data::{
    gen_synthetic_classification, load_dataset, load_image_csv, save_dataset, BlobSpec, Dataset,
    DatasetSpec, DatasetSplit,
};
pub use pipeline::{
    compress_run, compress_stage, eval_run, load_metrics, load_split, run_pipeline, EvalReport,
    MetricsReport, OptimizerTiming, BASELINE_LOG, COMPRESSED_MODEL, COMPRESSION_REPORT,
    CONFIG_FILE, EQUIVALENCE_REPORT, FULL_MODEL, METRICS_REPORT, PARTITION_FILE, TEST_SET,
    TRAINING_LOG,
};
pub use probes::{
    run_lemma_probes, LemmaCheck, LemmaReport, QuadraticProbe, CHECK_CONTRACTION, CHECK_IDENTITY,
    CHECK_MAGNITUDE, CHECK_SMOOTHNESS, CHECK_SUFFICIENT_DECREASE,
};
pub use regression::{
    gen_synthetic_regression, regression_config, restricted_least_squares, solve_regression,
    RegressionData, RegressionRun, RegressionSchedule, SyntheticGroupSparseProblem,
};
pub use runtime::{run_runtime_bench, RuntimeReport};
pub use train::{evaluate, train, train_paired, EpochLog, Evaluation, Optimizer, TrainRun};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("equivalence check failed: max |Δ| = {max_abs_diff:e} ≥ {tolerance:e}")]
    EquivalenceFailed { max_abs_diff: f64, tolerance: f64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Optimizer(#[from] DhspgError),
    #[error(transparent)]
    Compression(#[from] CompressionError),
}

#[cfg(test)]
mod tests;
