//! DHSPG against the single-λ HSPG baseline on the group-sparse regression.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dhspg::OptimizerMode;

use super::{
    gen_synthetic_regression, regression_config, solve_regression, HarnessError,
    RegressionSchedule, SyntheticGroupSparseProblem,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: OptimizerMode,
    /// `K` for DHSPG rows.
    pub target_zero_groups: Option<usize>,
    /// Global λ for HSPG rows.
    pub lambda: Option<f64>,
    pub zero_groups: usize,
    pub objective: f64,
    pub support: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub groups: usize,
    /// Sorted true support `S*`.
    pub true_support: Vec<usize>,
    pub oracle_objective: f64,
    pub rows: Vec<AblationRow>,
    /// Whether the HSPG sparsity is non-decreasing in λ (recorded, not
    /// required).
    pub hspg_monotone: bool,
}

impl AblationTable {
    pub fn dhspg_rows(&self) -> impl Iterator<Item = &AblationRow> {
        self.rows
            .iter()
            .filter(|r| r.method == OptimizerMode::Dhspg)
    }

    pub fn hspg_rows(&self) -> impl Iterator<Item = &AblationRow> {
        self.rows.iter().filter(|r| r.method == OptimizerMode::Hspg)
    }

    /// Distinct sparsity levels reached by the HSPG sweep.
    pub fn hspg_levels(&self) -> usize {
        let mut z: Vec<usize> = self.hspg_rows().map(|r| r.zero_groups).collect();
        z.sort_unstable();
        z.dedup();
        z.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,target,lambda,zero_groups,objective,support\n");
        for r in &self.rows {
            let method = match r.method {
                OptimizerMode::Dhspg => "dhspg",
                OptimizerMode::Hspg => "hspg",
            };
            let support: Vec<String> = r.support.iter().map(|g| g.to_string()).collect();
            s += &format!(
                "{method},{},{},{},{:.10e},{}\n",
                r.target_zero_groups
                    .map_or(String::new(), |k| k.to_string()),
                r.lambda.map_or(String::new(), |l| format!("{l:e}")),
                r.zero_groups,
                r.objective,
                support.join(" ")
            );
        }
        s
    }
}

/// Generates the problem from `seed`, then runs DHSPG for every target and
/// HSPG for every λ. Every run starts from `w = 0` with the batch order drawn
/// from a fresh generator seeded with `seed + 1`, so all rows share data and
/// schedule.
pub fn run_ablation_dhspg_vs_hspg(
    problem: &SyntheticGroupSparseProblem,
    targets: &[usize],
    lambdas: &[f64],
    schedule: &RegressionSchedule,
    seed: u64,
) -> Result<AblationTable, HarnessError> {
    if schedule.batch_size == 0 || schedule.epochs == 0 {
        return Err(HarnessError::Config(
            "regression schedule needs positive epochs and batch size".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = gen_synthetic_regression(problem, &mut rng)?;
    let base = regression_config(&data, schedule);
    let mut rows = Vec::with_capacity(targets.len() + lambdas.len());
    let run_rng = || ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));

    for &k in targets {
        let mut cfg = base.clone();
        cfg.target_zero_groups = k;
        let run = solve_regression(&data, cfg, schedule, &mut run_rng())?;
        rows.push(AblationRow {
            method: OptimizerMode::Dhspg,
            target_zero_groups: Some(k),
            lambda: None,
            zero_groups: run.zero_groups,
            objective: run.objective,
            support: run.support,
        });
    }
    for &lambda in lambdas {
        let mut cfg = base.clone();
        cfg.mode = OptimizerMode::Hspg;
        cfg.hspg_lambda = lambda;
        let run = solve_regression(&data, cfg, schedule, &mut run_rng())?;
        rows.push(AblationRow {
            method: OptimizerMode::Hspg,
            target_zero_groups: None,
            lambda: Some(lambda),
            zero_groups: run.zero_groups,
            objective: run.objective,
            support: run.support,
        });
    }

    let mut sweep: Vec<(f64, usize)> = rows
        .iter()
        .filter_map(|r| r.lambda.map(|l| (l, r.zero_groups)))
        .collect();
    sweep.sort_by(|a, b| a.0.total_cmp(&b.0));
    let hspg_monotone = sweep.windows(2).all(|w| w[0].1 <= w[1].1);
    Ok(AblationTable {
        seed,
        groups: problem.groups,
        true_support: data.support.clone(),
        oracle_objective: data.oracle_objective,
        rows,
        hspg_monotone,
    })
}
