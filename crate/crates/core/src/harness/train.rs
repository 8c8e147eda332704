//! Minibatch training of a graph on a classification dataset.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{forward, loss_and_gradient, Mode, Target};
use crate::dhspg::{count_zero_groups, Dhspg, DhspgError, GroupSpec, MomentumSgd, StepReport};
use crate::graph::{ComputationGraph, ParamLayout};

use super::{Dataset, DatasetSplit, HarnessError};

/// Anything that updates a flat parameter vector from a gradient.
pub trait Optimizer {
    fn step(&mut self, x: &mut [f64], grad: &[f64]) -> Result<StepReport, DhspgError>;
}

impl Optimizer for Dhspg {
    fn step(&mut self, x: &mut [f64], grad: &[f64]) -> Result<StepReport, DhspgError> {
        Dhspg::step(self, x, grad)
    }
}

impl Optimizer for MomentumSgd {
    fn step(&mut self, x: &mut [f64], grad: &[f64]) -> Result<StepReport, DhspgError> {
        let lr = MomentumSgd::step(self, x, grad);
        Ok(StepReport {
            lr,
            newly_frozen: 0,
            frozen: 0,
            mean_lambda: 0.0,
        })
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub zero_groups: usize,
    pub mean_lambda: f64,
    /// Wall time of the optimization part of the epoch (excludes evaluation).
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Eval-mode loss and accuracy in chunks of `chunk` samples.
pub fn evaluate(
    g: &ComputationGraph,
    data: &Dataset,
    chunk: usize,
) -> Result<Evaluation, HarnessError> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        let (x, target) = data.batch(part);
        let pass = forward(g, &[x], Mode::Eval)?;
        let out = pass.output(0);
        let (l, _) = target.evaluate(out)?;
        loss += l * part.len() as f64;
        let Target::CrossEntropy(labels) = &target else {
            unreachable!("classification batches carry class targets")
        };
        let k = out.sample_len();
        for (row, &y) in out.data().chunks(k).zip(labels) {
            let arg = row
                .iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best });
            correct += usize::from(arg == y);
        }
    }
    let n = data.len().max(1) as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

/// Per-model state carried across epochs: the flat parameters and the batch
/// order, which each epoch reshuffles in place.
struct EpochRunner {
    layout: ParamLayout,
    x: Vec<f64>,
    order: Vec<usize>,
}

impl EpochRunner {
    fn new(g: &ComputationGraph, data: &DatasetSplit) -> Self {
        let layout = ParamLayout::new(g);
        let x = layout.gather(g);
        Self {
            layout,
            x,
            order: (0..data.train.len()).collect(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn epoch<R: Rng + ?Sized>(
        &mut self,
        epoch: usize,
        g: &mut ComputationGraph,
        data: &DatasetSplit,
        opt: &mut dyn Optimizer,
        groups: &[GroupSpec],
        batch_size: usize,
        rng: &mut R,
    ) -> Result<EpochLog, HarnessError> {
        self.order.shuffle(rng);
        let start = Instant::now();
        let (mut loss_sum, mut lr, mut lambda) = (0.0, 0.0, 0.0);
        for part in self.order.chunks(batch_size.max(1)) {
            let (input, target) = data.train.batch(part);
            let (loss, grads, pass) = loss_and_gradient(g, &[input], &[target], Mode::Train)?;
            pass.apply_running_stats(g);
            let flat = grads.flatten(&self.layout);
            let report = opt.step(&mut self.x, &flat)?;
            self.layout.scatter(g, &self.x);
            loss_sum += loss * part.len() as f64;
            lr = report.lr;
            lambda = report.mean_lambda;
        }
        let seconds = start.elapsed().as_secs_f64();
        let eval = evaluate(g, &data.test, 256)?;
        Ok(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / data.train.len().max(1) as f64,
            test_loss: eval.loss,
            test_accuracy: eval.accuracy,
            zero_groups: count_zero_groups(&self.x, groups),
            mean_lambda: lambda,
            seconds,
        })
    }
}

/// Runs `epochs` passes over shuffled minibatches. The batch order of every
/// epoch is one permutation drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn train<R: Rng + ?Sized>(
    g: &mut ComputationGraph,
    data: &DatasetSplit,
    opt: &mut dyn Optimizer,
    groups: &[GroupSpec],
    epochs: usize,
    batch_size: usize,
    rng: &mut R,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>, HarnessError> {
    let mut runner = EpochRunner::new(g, data);
    let mut logs = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let log = runner.epoch(epoch, g, data, opt, groups, batch_size, rng)?;
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// One model being trained: graph, optimizer and batch-order RNG.
pub struct TrainRun<'a, R: ?Sized> {
    pub graph: &'a mut ComputationGraph,
    pub opt: &'a mut dyn Optimizer,
    pub rng: &'a mut R,
}

/// Trains two models side by side, alternating whole epochs. Each model ends
/// exactly where [`train`] would leave it; alternating only makes their epoch
/// timings comparable on a machine whose speed drifts.
pub fn train_paired<'a, R: Rng + ?Sized>(
    a: TrainRun<'a, R>,
    b: TrainRun<'a, R>,
    data: &DatasetSplit,
    groups: &[GroupSpec],
    epochs: usize,
    batch_size: usize,
) -> Result<(Vec<EpochLog>, Vec<EpochLog>), HarnessError> {
    let mut runs = [a, b];
    let mut runners = [
        EpochRunner::new(runs[0].graph, data),
        EpochRunner::new(runs[1].graph, data),
    ];
    let mut logs = [Vec::with_capacity(epochs), Vec::with_capacity(epochs)];
    for epoch in 0..epochs {
        for ((run, runner), out) in runs.iter_mut().zip(&mut runners).zip(&mut logs) {
            let log = runner.epoch(epoch, run.graph, data, run.opt, groups, batch_size, run.rng)?;
            out.push(log);
        }
    }
    let [la, lb] = logs;
    Ok((la, lb))
}
