//! Group-sparse least squares: the bed for exact-sparsity and oracle checks.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dhspg::{
    count_zero_groups, Dhspg, GroupSpec, LrSchedule, OptimizerConfig, OptimizerMode,
};

use super::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticGroupSparseProblem {
    /// Samples `m`.
    pub samples: usize,
    pub groups: usize,
    pub group_size: usize,
    /// `|S*|`.
    pub support: usize,
    pub noise: f64,
}

impl Default for SyntheticGroupSparseProblem {
    fn default() -> Self {
        Self {
            samples: 500,
            groups: 10,
            group_size: 5,
            support: 4,
            noise: 0.01,
        }
    }
}

impl SyntheticGroupSparseProblem {
    pub fn features(&self) -> usize {
        self.groups * self.group_size
    }

    /// Contiguous blocks of `group_size` coordinates.
    pub fn group_specs(&self) -> Vec<GroupSpec> {
        (0..self.groups)
            .map(|g| GroupSpec {
                ranges: std::iter::once(g * self.group_size..(g + 1) * self.group_size).collect(),
                component: 0,
            })
            .collect()
    }
}

/// `y = X·w* + σ·ε` with `w*` supported on `support`, plus the least-squares
/// solution restricted to that support.
#[derive(Clone, Debug)]
pub struct RegressionData {
    pub problem: SyntheticGroupSparseProblem,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub w_true: DVector<f64>,
    /// Sorted group indices of the true support.
    pub support: Vec<usize>,
    pub oracle: DVector<f64>,
    pub oracle_objective: f64,
}

impl RegressionData {
    /// `f(w) = ‖Xw − y‖² / (2m)`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let r = &self.x * DVector::from_column_slice(w) - &self.y;
        r.norm_squared() / (2.0 * self.x.nrows() as f64)
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let r = &self.x * DVector::from_column_slice(w) - &self.y;
        let g = self.x.tr_mul(&r) / self.x.nrows() as f64;
        g.as_slice().to_vec()
    }

    /// Largest eigenvalue of `XᵀX / m`.
    pub fn lipschitz(&self) -> f64 {
        let h = self.x.tr_mul(&self.x) / self.x.nrows() as f64;
        h.symmetric_eigenvalues().max()
    }

    /// Groups with at least one nonzero entry.
    pub fn support_of(&self, w: &[f64]) -> Vec<usize> {
        let s = self.problem.group_size;
        (0..self.problem.groups)
            .filter(|g| w[g * s..(g + 1) * s].iter().any(|&v| v != 0.0))
            .collect()
    }
}

/// Least squares over the columns of the listed groups; other coefficients
/// are zero.
pub fn restricted_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    group_size: usize,
    groups: &[usize],
) -> Result<DVector<f64>, HarnessError> {
    let cols: Vec<usize> = groups
        .iter()
        .flat_map(|g| g * group_size..(g + 1) * group_size)
        .collect();
    let sub = x.select_columns(&cols);
    let coef = sub
        .svd(true, true)
        .solve(y, 1e-12)
        .map_err(|e| HarnessError::Numerical(e.to_string()))?;
    let mut w = DVector::zeros(x.ncols());
    for (i, &c) in cols.iter().enumerate() {
        w[c] = coef[i];
    }
    Ok(w)
}

/// Stream order: support permutation, `w*` magnitudes and signs, `X`
/// row-major, noise.
pub fn gen_synthetic_regression<R: Rng + ?Sized>(
    problem: &SyntheticGroupSparseProblem,
    rng: &mut R,
) -> Result<RegressionData, HarnessError> {
    if problem.support > problem.groups {
        return Err(HarnessError::Config(format!(
            "support of {} groups exceeds {} groups",
            problem.support, problem.groups
        )));
    }
    let (m, n, s) = (problem.samples, problem.features(), problem.group_size);
    let mut order: Vec<usize> = (0..problem.groups).collect();
    order.shuffle(rng);
    let mut support = order[..problem.support].to_vec();
    support.sort_unstable();

    let mut w_true = DVector::zeros(n);
    for &g in &support {
        for i in g * s..(g + 1) * s {
            let mag = rng.random_range(0.5..1.5);
            w_true[i] = if rng.random_bool(0.5) { mag } else { -mag };
        }
    }
    let x = DMatrix::from_row_iterator(
        m,
        n,
        (0..m * n).map(|_| -> f64 { StandardNormal.sample(rng) }),
    );
    let noise = DVector::from_iterator(
        m,
        (0..m).map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            problem.noise * e
        }),
    );
    let y = &x * &w_true + noise;
    let oracle = restricted_least_squares(&x, &y, s, &support)?;
    let mut data = RegressionData {
        problem: problem.clone(),
        x,
        y,
        w_true,
        support,
        oracle,
        oracle_objective: 0.0,
    };
    data.oracle_objective = data.objective(data.oracle.as_slice());
    Ok(data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionRun {
    pub mode: OptimizerMode,
    pub target_zero_groups: usize,
    pub lambda: Option<f64>,
    pub zero_groups: usize,
    pub support: Vec<usize>,
    pub objective: f64,
    pub w: Vec<f64>,
}

impl RegressionData {
    /// Gradient of the objective restricted to the listed rows.
    pub fn batch_gradient(&self, w: &[f64], rows: &[usize]) -> Vec<f64> {
        let n = self.x.ncols();
        let mut g = vec![0.0; n];
        for &i in rows {
            let row = self.x.row(i);
            let r = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - self.y[i];
            for (gj, xj) in g.iter_mut().zip(row.iter()) {
                *gj += r * xj;
            }
        }
        let scale = 1.0 / rows.len() as f64;
        g.iter_mut().for_each(|v| *v *= scale);
        g
    }
}

/// Minibatch schedule of the regression runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionSchedule {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for RegressionSchedule {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
        }
    }
}

impl RegressionSchedule {
    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }
}

/// Step size `0.5/L`, decayed ×10 at half of the epoch budget. Salience
/// leans on magnitude: after warm-up the off-support groups are the small
/// ones, while their gradient angles are mostly noise.
pub fn regression_config(data: &RegressionData, schedule: &RegressionSchedule) -> OptimizerConfig {
    OptimizerConfig {
        lr: LrSchedule {
            initial: 0.5 / data.lipschitz(),
            decay: 10.0,
            period: (schedule.epochs / 2).max(1),
        },
        w_cos: 0.1,
        w_mag: 0.9,
        ..Default::default()
    }
}

/// Minibatch optimization from `w = 0`. Each epoch visits a fresh
/// permutation of the samples drawn from `rng`.
pub fn solve_regression<R: Rng + ?Sized>(
    data: &RegressionData,
    cfg: OptimizerConfig,
    schedule: &RegressionSchedule,
    rng: &mut R,
) -> Result<RegressionRun, HarnessError> {
    let groups = data.problem.group_specs();
    let n = data.problem.features();
    let m = data.problem.samples;
    let mode = cfg.mode;
    let k = cfg.target_zero_groups;
    let lambda = (mode == OptimizerMode::Hspg).then_some(cfg.hspg_lambda);
    let mut opt = Dhspg::new(cfg, groups.clone(), n, schedule.steps_per_epoch(m))?;
    let mut w = vec![0.0; n];
    let mut order: Vec<usize> = (0..m).collect();
    for _ in 0..schedule.epochs {
        order.shuffle(rng);
        for rows in order.chunks(schedule.batch_size) {
            let g = data.batch_gradient(&w, rows);
            opt.step(&mut w, &g)?;
        }
    }
    Ok(RegressionRun {
        mode,
        target_zero_groups: k,
        lambda,
        zero_groups: count_zero_groups(&w, &groups),
        support: data.support_of(&w),
        objective: data.objective(&w),
        w,
    })
}
