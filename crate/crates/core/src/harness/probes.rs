//! Numeric checks of the descent and magnitude-decrease inequalities of
//! DHSPG on a fixed quadratic `f(x) = ½xᵀAx` with full gradients.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dhspg::{guarded_cos, select_lambda, Dhspg, GroupSpec, OptimizerConfig};

use super::HarnessError;

/// The quadratic and the step constants of the probes.
#[derive(Clone, Debug)]
pub struct QuadraticProbe {
    pub a: DMatrix<f64>,
    /// `λ_max(A)`, computed from `a`.
    pub lipschitz: f64,
    pub groups: Vec<GroupSpec>,
    /// `α = step_fraction / L`.
    pub step_fraction: f64,
    pub omega: f64,
    /// Lower bound on `|cos θ_g|` required by the contraction check.
    pub rho: f64,
    pub lambda_amplify: f64,
    pub default_lambda: f64,
}

impl QuadraticProbe {
    /// `a` must be square and symmetric; groups are contiguous blocks of
    /// `group_size` coordinates.
    pub fn new(a: DMatrix<f64>, group_size: usize) -> Result<Self, HarnessError> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n || group_size == 0 || !n.is_multiple_of(group_size) {
            return Err(HarnessError::Config(format!(
                "probe matrix {}×{} does not split into groups of {group_size}",
                a.nrows(),
                a.ncols()
            )));
        }
        if (&a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
            return Err(HarnessError::Config("probe matrix is not symmetric".into()));
        }
        let lipschitz = a.symmetric_eigenvalues().max();
        if lipschitz <= 0.0 {
            return Err(HarnessError::Config(
                "probe matrix has no positive eigenvalue".into(),
            ));
        }
        let groups = (0..n / group_size)
            .map(|g| GroupSpec {
                ranges: std::iter::once(g * group_size..(g + 1) * group_size).collect(),
                component: 0,
            })
            .collect();
        Ok(Self {
            a,
            lipschitz,
            groups,
            step_fraction: 0.5,
            omega: 0.5,
            rho: 0.1,
            lambda_amplify: 2.0,
            default_lambda: 1e-3,
        })
    }

    /// `A = MᵀM/n + 0.1·I` with standard-normal `M` (n × n).
    pub fn random<R: Rng + ?Sized>(
        groups: usize,
        group_size: usize,
        rng: &mut R,
    ) -> Result<Self, HarnessError> {
        let n = groups * group_size;
        let m = DMatrix::from_fn(n, n, |_, _| -> f64 { StandardNormal.sample(&mut *rng) });
        let a = m.tr_mul(&m) / n as f64 + DMatrix::identity(n, n) * 0.1;
        Self::new((&a + a.transpose()) * 0.5, group_size)
    }

    pub fn alpha(&self) -> f64 {
        self.step_fraction / self.lipschitz
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        0.5 * v.dot(&(&self.a * &v))
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (&self.a * DVector::from_column_slice(x))
            .as_slice()
            .to_vec()
    }

    /// Upper end `λ̂_g` of the λ range for which the penalized group adds no
    /// ascent to the smoothness bound.
    pub fn lambda_hat(&self, cos_theta: f64, grad_norm: f64) -> f64 {
        let (l, a) = (self.lipschitz, self.alpha());
        let lin = (1.0 - l * a) * a * cos_theta * grad_norm;
        let disc = lin * lin + 2.0 * l * a * a * (a - l * a * a / 2.0) * grad_norm * grad_norm;
        (lin + disc.sqrt()) / (l * a * a)
    }
}

/// Outcome of one inequality over all probed cases. The margin is the slack
/// of the inequality (≥ 0 means it holds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub name: String,
    pub evaluated: usize,
    pub failures: usize,
    pub worst_margin: f64,
}

impl LemmaCheck {
    fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            evaluated: 0,
            failures: 0,
            worst_margin: f64::INFINITY,
        }
    }

    fn record(&mut self, margin: f64, holds: bool) {
        self.evaluated += 1;
        self.failures += usize::from(!holds);
        self.worst_margin = self.worst_margin.min(margin);
    }

    pub fn passed(&self) -> bool {
        self.evaluated > 0 && self.failures == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub trials: usize,
    pub alpha: f64,
    pub lipschitz: f64,
    pub omega: f64,
    pub rho: f64,
    /// `(2ω − ω²)ρ²`.
    pub gamma_sq: f64,
    /// Penalized groups whose selected λ had to be lowered below `λ̂_g`.
    pub lambda_clamped: usize,
    /// Iterates drawn and discarded because the contraction precondition
    /// (`⟨x_g, −d_g⟩ > 0`, `|cos θ_g| ≥ ρ` on every penalized group) failed.
    pub contraction_rejected: usize,
    /// Smallest `1 − ‖[x + αd]_p‖² / ‖[x]_p‖²` seen by the contraction check.
    pub min_contraction: f64,
    pub checks: Vec<LemmaCheck>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(LemmaCheck::passed)
    }

    pub fn check(&self, name: &str) -> Option<&LemmaCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const CHECK_SMOOTHNESS: &str = "smoothness_bound";
pub const CHECK_SUFFICIENT_DECREASE: &str = "sufficient_decrease";
pub const CHECK_MAGNITUDE: &str = "magnitude_decrease";
pub const CHECK_IDENTITY: &str = "magnitude_identity";
pub const CHECK_CONTRACTION: &str = "contraction";

const IDENTITY_TOL: f64 = 1e-10;

fn dot(a: &[f64], b: &[f64], spec: &GroupSpec) -> f64 {
    spec.ranges
        .iter()
        .flat_map(|r| r.clone())
        .map(|i| a[i] * b[i])
        .sum()
}

struct Iterate {
    x: Vec<f64>,
    d: Vec<f64>,
    grad: Vec<f64>,
    penalized: Vec<usize>,
}

/// Draws `x ~ N(0, I)`, a random non-empty penalized set, λ_g from the
/// optimizer's selection rule (capped at `0.99·λ̂_g`), and the resulting
/// direction from [`Dhspg::dual_halfspace_direction`].
fn draw_iterate<R: Rng + ?Sized>(
    probe: &QuadraticProbe,
    rng: &mut R,
    clamped: &mut usize,
) -> Result<Iterate, HarnessError> {
    let n = probe.a.nrows();
    let ng = probe.groups.len();
    let x: Vec<f64> = (0..n)
        .map(|_| -> f64 { StandardNormal.sample(&mut *rng) })
        .collect();
    let grad = probe.gradient(&x);
    let count = rng.random_range(1..=ng);
    let mut penalized = sample(rng, ng, count).into_vec();
    penalized.sort_unstable();
    let cfg = OptimizerConfig {
        lambda_amplify: probe.lambda_amplify,
        default_lambda: probe.default_lambda,
        ..Default::default()
    };
    let tau = cfg.tau;
    let mut opt = Dhspg::new(cfg, probe.groups.clone(), n, 1)?;
    opt.set_penalized(&penalized);
    for &g in &penalized {
        let spec = &probe.groups[g];
        let cos = guarded_cos(&x, &grad, &spec.ranges, tau);
        let gnorm = dot(&grad, &grad, spec).sqrt();
        let mut lambda = select_lambda(cos, gnorm, probe.lambda_amplify, probe.default_lambda);
        let cap = 0.99 * probe.lambda_hat(cos, gnorm);
        if lambda > cap {
            lambda = cap;
            *clamped += 1;
        }
        opt.set_group_lambda(g, lambda);
    }
    let d = opt.dual_halfspace_direction(&x, &grad);
    Ok(Iterate {
        x,
        d,
        grad,
        penalized,
    })
}

/// Evaluates every inequality at `trials` random iterates (the contraction
/// check at `trials` iterates that meet its precondition, drawing at most
/// `100·trials` candidates).
pub fn run_lemma_probes<R: Rng + ?Sized>(
    probe: &QuadraticProbe,
    trials: usize,
    rng: &mut R,
) -> Result<LemmaReport, HarnessError> {
    if !(probe.step_fraction > 0.0 && probe.step_fraction <= 1.0) {
        return Err(HarnessError::Config(
            "step_fraction must lie in (0, 1]".into(),
        ));
    }
    if !(probe.omega > 0.0 && probe.omega < 1.0) || !(probe.rho > 0.0 && probe.rho <= 1.0) {
        return Err(HarnessError::Config(
            "need ω ∈ (0, 1) and ρ ∈ (0, 1]".into(),
        ));
    }
    let (l, alpha, omega) = (probe.lipschitz, probe.alpha(), probe.omega);
    let gamma_sq = (2.0 * omega - omega * omega) * probe.rho * probe.rho;
    let mut smooth = LemmaCheck::new(CHECK_SMOOTHNESS);
    let mut decrease = LemmaCheck::new(CHECK_SUFFICIENT_DECREASE);
    let mut magnitude = LemmaCheck::new(CHECK_MAGNITUDE);
    let mut identity = LemmaCheck::new(CHECK_IDENTITY);
    let mut contraction = LemmaCheck::new(CHECK_CONTRACTION);
    let mut clamped = 0;

    for _ in 0..trials {
        let it = draw_iterate(probe, rng, &mut clamped)?;
        let step: Vec<f64> = it.x.iter().zip(&it.d).map(|(x, d)| x + alpha * d).collect();
        let (f0, f1) = (probe.value(&it.x), probe.value(&step));
        let scale = 1e-12 * (1.0 + f0.abs());

        let gd: f64 = it.grad.iter().zip(&it.d).map(|(g, d)| g * d).sum();
        let dd: f64 = it.d.iter().map(|d| d * d).sum();
        let bound = f0 + alpha * gd + 0.5 * l * alpha * alpha * dd;
        smooth.record(bound - f1, f1 <= bound + scale);

        let np_sq: f64 = (0..probe.groups.len())
            .filter(|g| !it.penalized.contains(g))
            .map(|g| dot(&it.grad, &it.grad, &probe.groups[g]))
            .sum();
        let target = f0 - (alpha - 0.5 * l * alpha * alpha) * np_sq;
        decrease.record(target - f1, f1 <= target + scale);

        for &g in &it.penalized {
            let spec = &probe.groups[g];
            let b = -dot(&it.x, &it.d, spec);
            let a = dot(&it.d, &it.d, spec);
            if b <= 0.0 || a == 0.0 {
                continue;
            }
            let xsq = dot(&it.x, &it.x, spec);
            let frac = rng.random_range(1e-3..1.0 - 1e-3);
            let t = frac * 2.0 * b / a;
            let moved = xsq - 2.0 * t * b + t * t * a;
            let after = spec
                .ranges
                .iter()
                .flat_map(|r| r.clone())
                .map(|i| (it.x[i] + t * it.d[i]).powi(2))
                .sum::<f64>();
            magnitude.record(xsq.sqrt() - after.sqrt(), after < xsq && moved < xsq);

            let t = omega * b / a;
            let lhs: f64 = spec
                .ranges
                .iter()
                .flat_map(|r| r.clone())
                .map(|i| (it.x[i] + t * it.d[i]).powi(2))
                .sum();
            let cos = b / (xsq.sqrt() * a.sqrt());
            let rhs = xsq + (omega * omega - 2.0 * omega) * xsq * cos * cos;
            let residual = (lhs - rhs).abs();
            identity.record(IDENTITY_TOL - residual, residual < IDENTITY_TOL);
        }
    }

    let mut rejected = 0;
    let mut min_contraction = f64::INFINITY;
    let mut drawn = 0;
    while contraction.evaluated < trials && drawn < 100 * trials {
        drawn += 1;
        let it = draw_iterate(probe, rng, &mut clamped)?;
        let mut ratio = f64::INFINITY;
        let mut ok = true;
        for &g in &it.penalized {
            let spec = &probe.groups[g];
            let b = -dot(&it.x, &it.d, spec);
            let a = dot(&it.d, &it.d, spec);
            let xsq = dot(&it.x, &it.x, spec);
            if b <= 0.0 || a == 0.0 || b / (xsq.sqrt() * a.sqrt()) < probe.rho {
                ok = false;
                break;
            }
            ratio = ratio.min(b / a);
        }
        if !ok {
            rejected += 1;
            continue;
        }
        let t = omega * ratio;
        let (mut before, mut after) = (0.0, 0.0);
        for &g in &it.penalized {
            for i in probe.groups[g].ranges.iter().flat_map(|r| r.clone()) {
                before += it.x[i] * it.x[i];
                after += (it.x[i] + t * it.d[i]).powi(2);
            }
        }
        let bound = (1.0 - gamma_sq) * before;
        min_contraction = min_contraction.min(1.0 - after / before);
        contraction.record(bound - after, after <= bound * (1.0 + 1e-12));
    }

    Ok(LemmaReport {
        trials,
        alpha,
        lipschitz: l,
        omega,
        rho: probe.rho,
        gamma_sq,
        lambda_clamped: clamped,
        contraction_rejected: rejected,
        min_contraction,
        checks: vec![smooth, decrease, magnitude, identity, contraction],
    })
}
