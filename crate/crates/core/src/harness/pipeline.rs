//! Partition → DHSPG training → compression → equivalence gate.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compression::{compress, verify_equivalence, CompressionReport, EquivalenceReport};
use crate::dhspg::{group_specs, Dhspg, MomentumSgd};
use crate::graph::{count_flops_params, init_parameters, ComputationGraph, ParamLayout};
use crate::partition::{partition, PartitionResult};

use super::{
    evaluate, gen_synthetic_classification, load_dataset, load_image_csv, save_dataset, train,
    train_paired, DatasetSpec, DatasetSplit, EpochLog, ExperimentConfig, HarnessError, TrainRun,
};

pub const PARTITION_FILE: &str = "partition.json";
pub const CONFIG_FILE: &str = "config.json";
pub const TRAINING_LOG: &str = "training.csv";
pub const BASELINE_LOG: &str = "baseline.csv";
pub const FULL_MODEL: &str = "model_full.json";
pub const COMPRESSED_MODEL: &str = "model_compressed.json";
pub const COMPRESSION_REPORT: &str = "compression.json";
pub const EQUIVALENCE_REPORT: &str = "equivalence.json";
pub const METRICS_REPORT: &str = "metrics.json";
pub const TEST_SET: &str = "test";

/// Wall time of one optimizer's epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTiming {
    pub optimizer: String,
    pub seconds_per_epoch: Vec<f64>,
    pub mean_seconds: f64,
}

impl OptimizerTiming {
    pub fn from_logs(optimizer: &str, logs: &[EpochLog]) -> Self {
        let seconds_per_epoch: Vec<f64> = logs.iter().map(|l| l.seconds).collect();
        let mean_seconds = seconds_per_epoch.iter().sum::<f64>() / logs.len().max(1) as f64;
        Self {
            optimizer: optimizer.into(),
            seconds_per_epoch,
            mean_seconds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub graph: String,
    pub seed: u64,
    pub groups: usize,
    pub target_zero_groups: usize,
    pub achieved_zero_groups: usize,
    /// Zero groups over all groups.
    pub group_sparsity: f64,
    /// Compressed over dense, in percent.
    pub flops_percent: f64,
    pub params_percent: f64,
    pub flops_dense: u64,
    pub flops_compressed: u64,
    pub params_dense: u64,
    pub params_compressed: u64,
    pub accuracy: f64,
    pub compressed_accuracy: f64,
    pub baseline_accuracy: Option<f64>,
    pub equivalence_max_abs_diff: f64,
    pub epochs: Vec<EpochLog>,
    pub baseline_epochs: Option<Vec<EpochLog>>,
    pub timings: Vec<OptimizerTiming>,
}

impl MetricsReport {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "graph {}  seed {}\n\
             zero groups   {}/{} (target {})\n\
             FLOPs         {:.1}% ({} → {})\n\
             params        {:.1}% ({} → {})\n\
             accuracy      {:.2}% (compressed {:.2}%)\n",
            self.graph,
            self.seed,
            self.achieved_zero_groups,
            self.groups,
            self.target_zero_groups,
            self.flops_percent,
            self.flops_dense,
            self.flops_compressed,
            self.params_percent,
            self.params_dense,
            self.params_compressed,
            100.0 * self.accuracy,
            100.0 * self.compressed_accuracy,
        );
        if let Some(b) = self.baseline_accuracy {
            s += &format!("dense SGD     {:.2}%\n", 100.0 * b);
        }
        s += &format!("max |Δ|       {:.3e}\n", self.equivalence_max_abs_diff);
        for t in &self.timings {
            s += &format!("{:<13} {:.3} s/epoch\n", t.optimizer, t.mean_seconds);
        }
        s
    }
}

pub(crate) fn write(dir: &Path, name: &str, contents: &str) -> Result<(), HarnessError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn read(dir: &Path, name: &str) -> Result<String, HarnessError> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_log(dir: &Path, name: &str, logs: &[EpochLog]) -> Result<(), HarnessError> {
    let path = dir.join(name);
    let csv_err = |e: csv::Error| HarnessError::Dataset(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    for l in logs {
        w.serialize(l).map_err(csv_err)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_split<R: rand::Rng + ?Sized>(
    spec: &DatasetSpec,
    rng: &mut R,
) -> Result<DatasetSplit, HarnessError> {
    match spec {
        DatasetSpec::SyntheticClassification(b) => gen_synthetic_classification(b, rng),
        DatasetSpec::ImageCsv {
            dir,
            channels,
            height,
            width,
            classes,
        } => load_image_csv(Path::new(dir), *channels, *height, *width, *classes),
        DatasetSpec::SyntheticRegression(_) => Err(HarnessError::Config(
            "synthetic-regression drives the ablation, not network training".into(),
        )),
    }
}

fn check_compatible(g: &ComputationGraph, data: &DatasetSplit) -> Result<(), HarnessError> {
    if g.inputs().len() != 1 || g.inputs()[0].with_batch(1) != data.train.sample_shape() {
        return Err(HarnessError::Config(format!(
            "graph inputs {:?} do not accept samples of shape {}",
            g.inputs().iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            data.train.sample_shape()
        )));
    }
    let outs = g.outputs();
    let width = outs
        .first()
        .and_then(|&o| g.port_shape(g.predecessors(o)[0]))
        .map(|s| s.numel());
    if outs.len() != 1 || width.is_none_or(|w| w < data.train.classes) {
        return Err(HarnessError::Config(format!(
            "graph must have one output of at least {} logits",
            data.train.classes
        )));
    }
    Ok(())
}

/// Runs the whole pipeline and writes every artifact into
/// `cfg.output_dir`. Random stream: dataset, parameter initialization,
/// training shuffles, equivalence inputs. The dense baseline replays the
/// stream from the post-initialization state, so both models see the same
/// initial weights and batch order.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<MetricsReport, HarnessError> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    let dir = cfg.output_path();
    fs::create_dir_all(&dir).map_err(|source| HarnessError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = load_split(&cfg.dataset, &mut rng)?;
    let mut g = cfg.load_graph()?;
    check_compatible(&g, &data)?;
    init_parameters(&mut g, &mut rng);
    let baseline_rng = rng.clone();
    let dense = g.clone();

    let part = partition(&g)?;
    write(&dir, PARTITION_FILE, &part.to_json())?;
    let k = cfg.resolve_target(&part)?;
    cfg.optimizer.survivor_floor = true;
    write(&dir, CONFIG_FILE, &serde_json::to_string_pretty(&cfg)?)?;
    save_dataset(&data.test, &dir, TEST_SET)?;

    let layout = ParamLayout::new(&g);
    let groups = group_specs(&part, &layout);
    let steps = data.train.len().div_ceil(cfg.batch_size);
    let mut opt = Dhspg::new(cfg.optimizer.clone(), groups.clone(), layout.len(), steps)?;
    // The dense baseline starts from the same weights and batch order; its
    // epochs alternate with the DHSPG ones so the two timings are comparable.
    let (logs, baseline_epochs) = if cfg.dense_baseline {
        let mut b = dense;
        let mut brng = baseline_rng;
        let mut sgd = MomentumSgd::new(
            cfg.optimizer.lr.clone(),
            cfg.optimizer.momentum,
            layout.len(),
            steps,
        );
        let (logs, blogs) = train_paired(
            TrainRun {
                graph: &mut g,
                opt: &mut opt,
                rng: &mut rng,
            },
            TrainRun {
                graph: &mut b,
                opt: &mut sgd,
                rng: &mut brng,
            },
            &data,
            &groups,
            cfg.epochs,
            cfg.batch_size,
        )?;
        write_log(&dir, BASELINE_LOG, &blogs)?;
        (logs, Some(blogs))
    } else {
        let logs = train(
            &mut g,
            &data,
            &mut opt,
            &groups,
            cfg.epochs,
            cfg.batch_size,
            &mut rng,
            |_| {},
        )?;
        (logs, None)
    };
    write_log(&dir, TRAINING_LOG, &logs)?;
    write(&dir, FULL_MODEL, &g.to_json())?;

    let (compressed, report, eq) = compress_stage(
        &dir,
        &g,
        &part,
        cfg.equivalence_inputs,
        cfg.equivalence_tolerance,
        &mut rng,
    )?;
    let accuracy = logs.last().map_or(0.0, |l| l.test_accuracy);
    let compressed_accuracy = evaluate(&compressed, &data.test, 256)?.accuracy;

    let mut timings = vec![OptimizerTiming::from_logs("dhspg", &logs)];
    if let Some(blogs) = &baseline_epochs {
        timings.push(OptimizerTiming::from_logs("sgd", blogs));
    }

    let achieved = logs.last().map_or(0, |l| l.zero_groups);
    let metrics = MetricsReport {
        graph: cfg.graph.clone(),
        seed: cfg.seed,
        groups: groups.len(),
        target_zero_groups: k,
        achieved_zero_groups: achieved,
        group_sparsity: achieved as f64 / groups.len().max(1) as f64,
        flops_percent: 100.0 * report.flops_ratio(),
        params_percent: 100.0 * report.params_ratio(),
        flops_dense: report.flops_before,
        flops_compressed: report.flops_after,
        params_dense: report.params_before,
        params_compressed: report.params_after,
        accuracy,
        compressed_accuracy,
        baseline_accuracy: baseline_epochs
            .as_ref()
            .and_then(|b| b.last())
            .map(|l| l.test_accuracy),
        equivalence_max_abs_diff: eq.max_abs_diff,
        epochs: logs,
        baseline_epochs,
        timings,
    };
    write(
        &dir,
        METRICS_REPORT,
        &serde_json::to_string_pretty(&metrics)?,
    )?;
    Ok(metrics)
}

/// Builds the compressed model from trained weights, writes the model,
/// compression and equivalence reports, and fails if outputs differ.
pub fn compress_stage<R: rand::Rng + ?Sized>(
    dir: &Path,
    trained: &ComputationGraph,
    part: &PartitionResult,
    inputs: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<(ComputationGraph, CompressionReport, EquivalenceReport), HarnessError> {
    let (compressed, report) = compress(trained, part)?;
    write(dir, COMPRESSED_MODEL, &compressed.to_json())?;
    write(dir, COMPRESSION_REPORT, &report.to_json())?;
    let eq = verify_equivalence(trained, &compressed, inputs, 1, tolerance, rng)?;
    write(dir, EQUIVALENCE_REPORT, &eq.to_json())?;
    if !eq.passed {
        return Err(HarnessError::EquivalenceFailed {
            max_abs_diff: eq.max_abs_diff,
            tolerance,
        });
    }
    Ok((compressed, report, eq))
}

/// Re-runs compression from the artifacts of a finished run.
pub fn compress_run(dir: &Path) -> Result<(CompressionReport, EquivalenceReport), HarnessError> {
    let cfg: ExperimentConfig = serde_json::from_str(&read(dir, CONFIG_FILE)?)?;
    let g = ComputationGraph::from_json(&read(dir, FULL_MODEL)?)?;
    let part = PartitionResult::from_json(&read(dir, PARTITION_FILE)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (_, report, eq) = compress_stage(
        dir,
        &g,
        &part,
        cfg.equivalence_inputs,
        cfg.equivalence_tolerance,
        &mut rng,
    )?;
    Ok((report, eq))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub full_accuracy: f64,
    pub full_loss: f64,
    pub compressed_accuracy: f64,
    pub compressed_loss: f64,
    pub flops_full: u64,
    pub flops_compressed: u64,
}

/// Evaluates the stored full and compressed models on the stored test set.
pub fn eval_run(dir: &Path) -> Result<EvalReport, HarnessError> {
    let test = load_dataset(dir, TEST_SET)?;
    let full = ComputationGraph::from_json(&read(dir, FULL_MODEL)?)?;
    let comp = ComputationGraph::from_json(&read(dir, COMPRESSED_MODEL)?)?;
    let a = evaluate(&full, &test, 256)?;
    let b = evaluate(&comp, &test, 256)?;
    Ok(EvalReport {
        samples: test.len(),
        full_accuracy: a.accuracy,
        full_loss: a.loss,
        compressed_accuracy: b.accuracy,
        compressed_loss: b.loss,
        flops_full: count_flops_params(&full)?.flops,
        flops_compressed: count_flops_params(&comp)?.flops,
    })
}

pub fn load_metrics(dir: &Path) -> Result<MetricsReport, HarnessError> {
    Ok(serde_json::from_str(&read(dir, METRICS_REPORT)?)?)
}
