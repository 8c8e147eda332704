//! Per-epoch wall time of DHSPG against momentum SGD on identical work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dhspg::{group_specs, Dhspg, MomentumSgd};
use crate::graph::{init_parameters, ParamLayout};
use crate::partition::partition;

use super::{load_split, train_paired, ExperimentConfig, HarnessError, OptimizerTiming, TrainRun};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeReport {
    pub graph: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub target_zero_groups: usize,
    pub timings: Vec<OptimizerTiming>,
    /// Mean DHSPG epoch time over mean SGD epoch time.
    pub ratio: f64,
}

/// Trains two copies of the same initialized graph for `cfg.epochs`, one with
/// DHSPG and one with momentum SGD, on the same data and batch order with
/// alternating epochs, and reports the epoch times (forward, backward and
/// optimizer step; evaluation excluded).
pub fn run_runtime_bench(cfg: &ExperimentConfig) -> Result<RuntimeReport, HarnessError> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = load_split(&cfg.dataset, &mut rng)?;
    let mut g = cfg.load_graph()?;
    init_parameters(&mut g, &mut rng);
    let part = partition(&g)?;
    let k = cfg.resolve_target(&part)?;
    cfg.optimizer.survivor_floor = true;
    let layout = ParamLayout::new(&g);
    let groups = group_specs(&part, &layout);
    let steps = data.train.len().div_ceil(cfg.batch_size);

    let mut sgd_graph = g.clone();
    let mut sgd_rng = rng.clone();
    let mut dhspg = Dhspg::new(cfg.optimizer.clone(), groups.clone(), layout.len(), steps)?;
    let mut sgd = MomentumSgd::new(
        cfg.optimizer.lr.clone(),
        cfg.optimizer.momentum,
        layout.len(),
        steps,
    );
    let (dlogs, slogs) = train_paired(
        TrainRun {
            graph: &mut g,
            opt: &mut dhspg,
            rng: &mut rng,
        },
        TrainRun {
            graph: &mut sgd_graph,
            opt: &mut sgd,
            rng: &mut sgd_rng,
        },
        &data,
        &groups,
        cfg.epochs,
        cfg.batch_size,
    )?;
    let timings = vec![
        OptimizerTiming::from_logs("dhspg", &dlogs),
        OptimizerTiming::from_logs("sgd", &slogs),
    ];
    let ratio = timings[0].mean_seconds / timings[1].mean_seconds;
    Ok(RuntimeReport {
        graph: cfg.graph,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        target_zero_groups: k,
        timings,
        ratio,
    })
}
