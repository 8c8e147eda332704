use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dhspg::OptimizerConfig;
use crate::graph::{chain_net, demo_net, residual_block_net, stacked_unets_mini, ComputationGraph};
use crate::partition::PartitionResult;

use super::{BlobSpec, DatasetSpec, HarnessError, RegressionSchedule};

/// Environment variable overriding [`ExperimentConfig::seed`].
pub const SEED_ENV: &str = "ZIGPRUNE_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// A builder name (`demo_net`, `residual_block_net`, `stacked_unets_mini`,
    /// `chain_net:<blocks>`) or a path to a graph JSON document.
    pub graph: String,
    pub dataset: DatasetSpec,
    pub optimizer: OptimizerConfig,
    /// When set, overrides `optimizer.target_zero_groups` with
    /// `round(fraction · |groups|)`.
    pub target_fraction: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub output_dir: String,
    /// Also train an identically budgeted momentum-SGD model.
    pub dense_baseline: bool,
    /// Random inputs fed to full and compressed models.
    pub equivalence_inputs: usize,
    pub equivalence_tolerance: f64,
    /// Regression ablation: DHSPG targets and the HSPG λ sweep.
    pub ablation_targets: Vec<usize>,
    pub ablation_lambdas: Vec<f64>,
    pub regression: RegressionSchedule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            graph: "demo_net".into(),
            dataset: DatasetSpec::SyntheticClassification(BlobSpec::default()),
            optimizer: OptimizerConfig::default(),
            target_fraction: None,
            epochs: 30,
            batch_size: 64,
            seed: 0,
            output_dir: "runs/demo".into(),
            dense_baseline: false,
            equivalence_inputs: 100,
            equivalence_tolerance: 1e-9,
            ablation_targets: vec![2, 4, 6],
            ablation_lambdas: vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0],
            regression: RegressionSchedule::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file. Relative graph, dataset and output paths are
    /// resolved against the file's directory; `ZIGPRUNE_SEED` overrides the
    /// seed.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply_env()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut String| {
            if Path::new(p.as_str()).is_relative() {
                *p = base.join(&*p).display().to_string();
            }
        };
        if builtin_graph(&self.graph).is_none() {
            fix(&mut self.graph);
        }
        if let DatasetSpec::ImageCsv { dir, .. } = &mut self.dataset {
            fix(dir);
        }
        fix(&mut self.output_dir);
    }

    pub fn apply_env(&mut self) -> Result<(), HarnessError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV}=`{v}` is not a u64")))?;
        }
        Ok(())
    }

    pub fn output_path(&self) -> PathBuf {
        PathBuf::from(&self.output_dir)
    }

    pub fn load_graph(&self) -> Result<ComputationGraph, HarnessError> {
        load_graph(&self.graph)
    }

    /// Fixes `K` against the partition and checks
    /// `K ≤ |groups| − #prunable components`, so that every component keeps a
    /// surviving group.
    pub fn resolve_target(&mut self, partition: &PartitionResult) -> Result<usize, HarnessError> {
        let groups = partition.zigs.len();
        if let Some(f) = self.target_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(HarnessError::Config(format!(
                    "target_fraction {f} outside [0, 1]"
                )));
            }
            self.optimizer.target_zero_groups = (f * groups as f64).round() as usize;
        }
        let k = self.optimizer.target_zero_groups;
        let limit = groups.saturating_sub(partition.prunable_components().len());
        if k > limit {
            return Err(HarnessError::Config(format!(
                "K = {k} exceeds |groups| − #components = {groups} − {} = {limit}",
                partition.prunable_components().len()
            )));
        }
        self.optimizer.validate(groups)?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be positive".into()));
        }
        if self.equivalence_tolerance <= 0.0 {
            return Err(HarnessError::Config(
                "equivalence_tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A builder name (`demo_net`, `residual_block_net`, `stacked_unets_mini`,
/// `chain_net:<blocks>`) or a path to a graph JSON document.
pub fn load_graph(spec: &str) -> Result<ComputationGraph, HarnessError> {
    if let Some(g) = builtin_graph(spec) {
        return g;
    }
    let text = fs::read_to_string(spec).map_err(|source| HarnessError::Io {
        path: spec.to_string(),
        source,
    })?;
    Ok(ComputationGraph::from_json(&text)?)
}

fn builtin_graph(name: &str) -> Option<Result<ComputationGraph, HarnessError>> {
    match name {
        "demo_net" => Some(Ok(demo_net())),
        "residual_block_net" => Some(Ok(residual_block_net())),
        "stacked_unets_mini" => Some(Ok(stacked_unets_mini())),
        _ => name.strip_prefix("chain_net:").map(|n| {
            n.parse()
                .map(chain_net)
                .map_err(|_| HarnessError::Config(format!("bad chain length in `{name}`")))
        }),
    }
}
