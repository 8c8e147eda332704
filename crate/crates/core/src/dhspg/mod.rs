//! Dual half-space projected gradient (DHSPG) over zero-invariant groups, plus
//! an HSPG baseline and plain momentum SGD.
//!
//! The optimizer works on a flat parameter vector. Groups are lists of index
//! ranges into it (see [`group_specs`]); indices outside every group are
//! never penalized.
//!
//! Phases of [`Dhspg::step`]:
//! 1. `t < T_w`: momentum SGD on everything.
//! 2. `t = T_w`: salience scores fix the `K` penalized groups.
//! 3. `t ≥ T_w`: penalized groups follow the dual half-space direction with a
//!    per-group λ re-selected every step; the rest follow momentum SGD.
//! 4. `t ≥ T_h`: penalized trial groups that leave the half-space
//!    `⟨x_t, x̃⟩ ≥ ε‖x_t‖²` are set to zero and frozen, until `K` are frozen.

mod lambda;
mod sgd;

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::ParamLayout;
use crate::partition::PartitionResult;

pub use lambda::{guarded_cos, lambda_interval, select_lambda, LambdaInterval};
pub use sgd::MomentumSgd;

#[derive(Debug, Error, PartialEq)]
pub enum DhspgError {
    #[error("target of {k} zero groups exceeds the {available} groups that may be zeroed")]
    KExceedsGroupCount { k: usize, available: usize },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("parameter vector has {found} entries, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
}

/// Step decay: `α_t = α₀ / decay^⌊epoch / period⌋`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    /// Epochs per decay period (`T_period`).
    pub period: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 0.1,
            decay: 10.0,
            period: 10,
        }
    }
}

impl LrSchedule {
    pub fn at(&self, step: usize, steps_per_epoch: usize) -> f64 {
        let period_steps = (self.period * steps_per_epoch).max(1);
        self.initial / self.decay.powi((step / period_steps) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMode {
    Dhspg,
    Hspg,
}

/// How the `K` penalized groups are drawn from the components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyAllocation {
    /// Top-`K` salience over all groups; magnitudes are normalized by the
    /// largest group norm of the whole model.
    #[default]
    Global,
    /// Every component gets a share of `K` proportional to its group count
    /// (largest remainder) and fills it with its own top-salience groups;
    /// magnitudes are normalized within the component. Keeps one wide layer
    /// from absorbing the whole budget.
    PerComponent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: LrSchedule,
    /// Target number of zero groups `K`.
    pub target_zero_groups: usize,
    /// `T_w` in steps; `None` means half of the first decay period.
    pub warmup_steps: Option<usize>,
    /// `T_h` in steps; `None` means `T_w`.
    pub halfspace_start: Option<usize>,
    pub tau: f64,
    /// `Λ`, used when `cos θ_g ≥ 0`.
    pub default_lambda: f64,
    /// Half-space threshold `ε ∈ [0, 1)`.
    pub epsilon: f64,
    pub lambda_amplify: f64,
    pub momentum: f64,
    pub mode: OptimizerMode,
    /// Global λ of the HSPG baseline.
    pub hspg_lambda: f64,
    pub w_cos: f64,
    pub w_mag: f64,
    pub allocation: PenaltyAllocation,
    /// Never penalize every group of one component.
    pub survivor_floor: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: LrSchedule::default(),
            target_zero_groups: 0,
            warmup_steps: None,
            halfspace_start: None,
            tau: 1e-6,
            default_lambda: 1e-3,
            epsilon: 0.0,
            lambda_amplify: 2.0,
            momentum: 0.0,
            mode: OptimizerMode::Dhspg,
            hspg_lambda: 1e-3,
            w_cos: 0.5,
            w_mag: 0.5,
            allocation: PenaltyAllocation::Global,
            survivor_floor: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, n_groups: usize) -> Result<(), DhspgError> {
        let bad = |m: &str| Err(DhspgError::InvalidConfig(m.into()));
        if self.target_zero_groups > n_groups {
            return Err(DhspgError::KExceedsGroupCount {
                k: self.target_zero_groups,
                available: n_groups,
            });
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1)");
        }
        if self.tau <= 0.0 {
            return bad("tau must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.lr.initial <= 0.0 || self.lr.decay <= 0.0 {
            return bad("learning rate and decay must be positive");
        }
        if let (Some(w), Some(h)) = (self.warmup_steps, self.halfspace_start) {
            if w > h {
                return bad("warm-up must end before half-space projection starts");
            }
        }
        Ok(())
    }
}

/// Flat index ranges of one group and the component it belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub ranges: Vec<Range<usize>>,
    pub component: usize,
}

/// Resolves every ZIG's slices to flat ranges of `layout`.
pub fn group_specs(partition: &PartitionResult, layout: &ParamLayout) -> Vec<GroupSpec> {
    partition
        .zigs
        .iter()
        .map(|z| GroupSpec {
            ranges: z
                .slices
                .iter()
                .map(|s| {
                    layout
                        .flat_range(s.vertex, s.role, s.range.clone())
                        .expect("partition matches layout")
                })
                .collect(),
            component: z.component,
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupState {
    pub index: usize,
    pub cos_theta: f64,
    pub salience: f64,
    pub penalized: bool,
    pub lambda_g: f64,
    pub frozen_zero: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DhspgState {
    pub t: usize,
    pub momentum: Vec<f64>,
    pub groups: Vec<GroupState>,
    pub achieved_group_sparsity: usize,
    pub penalized_fixed: bool,
}

/// Per-step summary for logs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub lr: f64,
    pub newly_frozen: usize,
    pub frozen: usize,
    /// Mean λ over the groups that were penalized this step.
    pub mean_lambda: f64,
}

#[derive(Clone, Debug)]
pub struct Dhspg {
    cfg: OptimizerConfig,
    groups: Vec<GroupSpec>,
    steps_per_epoch: usize,
    warmup: usize,
    halfspace: usize,
    state: DhspgState,
}

impl Dhspg {
    pub fn new(
        cfg: OptimizerConfig,
        groups: Vec<GroupSpec>,
        n_params: usize,
        steps_per_epoch: usize,
    ) -> Result<Self, DhspgError> {
        cfg.validate(groups.len())?;
        let steps_per_epoch = steps_per_epoch.max(1);
        let warmup = cfg
            .warmup_steps
            .unwrap_or(cfg.lr.period * steps_per_epoch / 2);
        let halfspace = cfg.halfspace_start.unwrap_or(warmup).max(warmup);
        if let Some(r) = groups
            .iter()
            .flat_map(|g| &g.ranges)
            .find(|r| r.end > n_params)
        {
            return Err(DhspgError::LengthMismatch {
                expected: r.end,
                found: n_params,
            });
        }
        let state = DhspgState {
            t: 0,
            momentum: vec![0.0; n_params],
            groups: (0..groups.len())
                .map(|index| GroupState {
                    index,
                    ..Default::default()
                })
                .collect(),
            achieved_group_sparsity: 0,
            penalized_fixed: false,
        };
        Ok(Self {
            cfg,
            groups,
            steps_per_epoch,
            warmup,
            halfspace,
            state,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &DhspgState {
        &self.state
    }

    pub fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup
    }

    pub fn halfspace_start(&self) -> usize {
        self.halfspace
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr.at(self.state.t, self.steps_per_epoch)
    }

    pub fn penalized(&self) -> Vec<usize> {
        self.state
            .groups
            .iter()
            .filter(|g| g.penalized)
            .map(|g| g.index)
            .collect()
    }

    fn check_len(&self, v: &[f64]) -> Result<(), DhspgError> {
        if v.len() != self.state.momentum.len() {
            return Err(DhspgError::LengthMismatch {
                expected: self.state.momentum.len(),
                found: v.len(),
            });
        }
        Ok(())
    }

    /// `m ← β·m + ∇f`, with frozen groups pinned to zero. Returns the
    /// gradient estimate used by the rest of the step.
    fn update_momentum(&mut self, grad: &[f64]) {
        let beta = self.cfg.momentum;
        for (m, g) in self.state.momentum.iter_mut().zip(grad) {
            *m = beta * *m + g;
        }
        for (spec, gs) in self.groups.iter().zip(&self.state.groups) {
            if gs.frozen_zero {
                for r in &spec.ranges {
                    self.state.momentum[r.clone()].fill(0.0);
                }
            }
        }
    }

    /// Momentum-SGD step on every variable, without penalization.
    pub fn warmup_step(&mut self, x: &mut [f64], grad: &[f64]) -> Result<StepReport, DhspgError> {
        self.check_len(x)?;
        self.check_len(grad)?;
        let lr = self.lr();
        self.update_momentum(grad);
        for (xi, m) in x.iter_mut().zip(&self.state.momentum) {
            *xi -= lr * m;
        }
        self.state.t += 1;
        Ok(self.report(lr, 0, 0.0))
    }

    /// Records `cos θ_g` and the salience score of every group.
    pub fn compute_salience(&mut self, x: &[f64], grad: &[f64]) -> Vec<(f64, f64)> {
        let tau = self.cfg.tau;
        let norms: Vec<f64> = self
            .groups
            .iter()
            .map(|g| lambda::norm(x, &g.ranges))
            .collect();
        let global = norms.iter().copied().fold(0.0, f64::max);
        let mut per_component: std::collections::HashMap<usize, f64> = Default::default();
        for (spec, &n) in self.groups.iter().zip(&norms) {
            let m = per_component.entry(spec.component).or_default();
            *m = m.max(n);
        }
        let mut out = Vec::with_capacity(self.groups.len());
        for ((spec, gs), &n) in self.groups.iter().zip(&mut self.state.groups).zip(&norms) {
            let cos = guarded_cos(x, grad, &spec.ranges, tau);
            let max_norm = match self.cfg.allocation {
                PenaltyAllocation::Global => global,
                PenaltyAllocation::PerComponent => per_component[&spec.component],
            };
            let rel = if max_norm > 0.0 { n / max_norm } else { 0.0 };
            gs.cos_theta = cos;
            gs.salience = self.cfg.w_cos * cos + self.cfg.w_mag * (1.0 - rel);
            out.push((cos, gs.salience));
        }
        out
    }

    /// Marks the `K` highest-salience groups as penalized (ties to the lower
    /// index), either globally or per component quota. With
    /// `survivor_floor`, a group is skipped if taking it would penalize every
    /// group of its component.
    pub fn partition_penalized(&mut self) -> Result<(), DhspgError> {
        let k = self.cfg.target_zero_groups;
        let n = self.groups.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            self.state.groups[b]
                .salience
                .total_cmp(&self.state.groups[a].salience)
                .then(a.cmp(&b))
        });
        let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
        for g in &self.groups {
            *sizes.entry(g.component).or_default() += 1;
        }
        let floor = usize::from(self.cfg.survivor_floor);
        let quota: BTreeMap<usize, usize> = match self.cfg.allocation {
            PenaltyAllocation::Global => sizes.iter().map(|(&c, &s)| (c, s - floor)).collect(),
            PenaltyAllocation::PerComponent => proportional_quota(&sizes, k, floor),
        };
        let mut taken: BTreeMap<usize, usize> = BTreeMap::new();
        let mut chosen = Vec::with_capacity(k);
        for g in order {
            if chosen.len() == k {
                break;
            }
            let c = self.groups[g].component;
            let t = taken.entry(c).or_default();
            if *t >= quota[&c] {
                continue;
            }
            *t += 1;
            chosen.push(g);
        }
        if chosen.len() < k {
            return Err(DhspgError::KExceedsGroupCount {
                k,
                available: chosen.len(),
            });
        }
        for gs in &mut self.state.groups {
            gs.penalized = false;
        }
        for g in chosen {
            self.state.groups[g].penalized = true;
        }
        self.state.penalized_fixed = true;
        Ok(())
    }

    /// `d = −∇f` everywhere, minus `λ_g·x_g / max(‖x_g‖, τ)` on penalized
    /// groups (all groups in HSPG mode); zero on frozen groups. Uses the λ
    /// values currently stored in the group states.
    pub fn dual_halfspace_direction(&self, x: &[f64], grad: &[f64]) -> Vec<f64> {
        let mut d: Vec<f64> = grad.iter().map(|g| -g).collect();
        let all = self.cfg.mode == OptimizerMode::Hspg;
        for (spec, gs) in self.groups.iter().zip(&self.state.groups) {
            if gs.frozen_zero {
                for r in &spec.ranges {
                    d[r.clone()].fill(0.0);
                }
                continue;
            }
            if !(gs.penalized || all) {
                continue;
            }
            let scale = gs.lambda_g / lambda::norm(x, &spec.ranges).max(self.cfg.tau);
            for i in spec.ranges.iter().flat_map(|r| r.clone()) {
                d[i] -= scale * x[i];
            }
        }
        d
    }

    /// Writes `trial` into `x`, except that penalized groups (all groups in
    /// HSPG mode) whose trial falls outside `⟨x, x̃⟩ ≥ ε‖x‖²` are zeroed and
    /// frozen. In DHSPG mode projection stops once `K` groups are frozen.
    /// Returns the number of newly frozen groups.
    pub fn halfspace_project(&mut self, x: &mut [f64], trial: &[f64]) -> usize {
        let dhspg = self.cfg.mode == OptimizerMode::Dhspg;
        let k = self.cfg.target_zero_groups;
        let mut frozen = self.frozen_count();
        let mut newly = 0;
        let mut zeroed = vec![false; self.groups.len()];
        for (g, (spec, gs)) in self.groups.iter().zip(&mut self.state.groups).enumerate() {
            if gs.frozen_zero || !(gs.penalized || !dhspg) {
                continue;
            }
            if dhspg && frozen >= k {
                break;
            }
            let inner = lambda::dot(x, trial, &spec.ranges);
            let sq = lambda::dot(x, x, &spec.ranges);
            if inner < self.cfg.epsilon * sq {
                gs.frozen_zero = true;
                zeroed[g] = true;
                frozen += 1;
                newly += 1;
            }
        }
        x.copy_from_slice(trial);
        for (spec, z) in self.groups.iter().zip(zeroed) {
            if z {
                for r in &spec.ranges {
                    x[r.clone()].fill(0.0);
                    self.state.momentum[r.clone()].fill(0.0);
                }
            }
        }
        self.state.achieved_group_sparsity = count_zero_groups(x, &self.groups);
        newly
    }

    fn frozen_count(&self) -> usize {
        self.state.groups.iter().filter(|g| g.frozen_zero).count()
    }

    /// Re-selects λ_g on every active penalized group (all groups in HSPG
    /// mode) from the iterate `x` and gradient estimate `est`. Returns the
    /// mean λ over those groups.
    pub fn select_group_lambdas(&mut self, x: &[f64], est: &[f64]) -> f64 {
        let cfg = &self.cfg;
        let (mut sum, mut count) = (0.0, 0);
        for (spec, gs) in self.groups.iter().zip(&mut self.state.groups) {
            if gs.frozen_zero {
                gs.lambda_g = 0.0;
                continue;
            }
            match cfg.mode {
                OptimizerMode::Hspg => gs.lambda_g = cfg.hspg_lambda,
                OptimizerMode::Dhspg => {
                    if !gs.penalized {
                        continue;
                    }
                    gs.cos_theta = guarded_cos(x, est, &spec.ranges, cfg.tau);
                    let gnorm = lambda::norm(est, &spec.ranges);
                    gs.lambda_g =
                        select_lambda(gs.cos_theta, gnorm, cfg.lambda_amplify, cfg.default_lambda);
                }
            }
            sum += gs.lambda_g;
            count += 1;
        }
        if count > 0 {
            sum / count as f64
        } else {
            0.0
        }
    }

    /// Overrides the stored λ of one group (used by the next
    /// [`Dhspg::dual_halfspace_direction`]).
    pub fn set_group_lambda(&mut self, group: usize, lambda: f64) {
        self.state.groups[group].lambda_g = lambda;
    }

    /// Fixes the penalized set by hand, bypassing salience.
    pub fn set_penalized(&mut self, groups: &[usize]) {
        for gs in &mut self.state.groups {
            gs.penalized = groups.contains(&gs.index);
        }
        self.state.penalized_fixed = true;
    }

    /// One optimizer step (warm-up, penalized, or HSPG depending on mode and
    /// `t`). `grad` is the (stochastic) gradient at `x`.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) -> Result<StepReport, DhspgError> {
        if self.cfg.mode == OptimizerMode::Hspg {
            return self.hspg_step(x, grad);
        }
        if self.state.t < self.warmup {
            return self.warmup_step(x, grad);
        }
        self.check_len(x)?;
        self.check_len(grad)?;
        let lr = self.lr();
        self.update_momentum(grad);
        if !self.state.penalized_fixed {
            let m = self.state.momentum.clone();
            self.compute_salience(x, &m);
            self.partition_penalized()?;
        }
        self.penalized_update(x, lr)
    }

    /// Baseline: one global λ on every group, projection on every group.
    pub fn hspg_step(&mut self, x: &mut [f64], grad: &[f64]) -> Result<StepReport, DhspgError> {
        if self.state.t < self.warmup {
            return self.warmup_step(x, grad);
        }
        self.check_len(x)?;
        self.check_len(grad)?;
        let lr = self.lr();
        self.update_momentum(grad);
        self.penalized_update(x, lr)
    }

    fn penalized_update(&mut self, x: &mut [f64], lr: f64) -> Result<StepReport, DhspgError> {
        let m = std::mem::take(&mut self.state.momentum);
        let mean_lambda = self.select_group_lambdas(x, &m);
        let d = self.dual_halfspace_direction(x, &m);
        self.state.momentum = m;
        let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + lr * di).collect();
        let newly = if self.state.t >= self.halfspace {
            self.halfspace_project(x, &trial)
        } else {
            x.copy_from_slice(&trial);
            0
        };
        self.state.t += 1;
        Ok(self.report(lr, newly, mean_lambda))
    }

    fn report(&self, lr: f64, newly_frozen: usize, mean_lambda: f64) -> StepReport {
        StepReport {
            lr,
            newly_frozen,
            frozen: self.frozen_count(),
            mean_lambda,
        }
    }
}

/// Number of groups whose entries are all exactly zero.
pub fn count_zero_groups(x: &[f64], groups: &[GroupSpec]) -> usize {
    groups
        .iter()
        .filter(|g| {
            g.ranges
                .iter()
                .all(|r| x[r.clone()].iter().all(|&v| v == 0.0))
        })
        .count()
}

/// Splits `k` over components in proportion to their sizes by largest
/// remainder, each capped at `size − floor`. Leftover caused by caps goes to
/// components with room, lowest id first.
pub fn proportional_quota(
    sizes: &BTreeMap<usize, usize>,
    k: usize,
    floor: usize,
) -> BTreeMap<usize, usize> {
    let total: usize = sizes.values().sum();
    if total == 0 {
        return BTreeMap::new();
    }
    let cap = |c: &usize| sizes[c].saturating_sub(floor);
    let mut quota: BTreeMap<usize, usize> = BTreeMap::new();
    let mut rest: Vec<(usize, usize)> = Vec::new();
    for (&c, &s) in sizes {
        let exact = k * s;
        quota.insert(c, (exact / total).min(cap(&c)));
        rest.push((exact % total, c));
    }
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = k.saturating_sub(quota.values().sum());
    for (_, c) in &rest {
        if left == 0 {
            break;
        }
        let q = quota.get_mut(c).expect("component present");
        if *q < cap(c) {
            *q += 1;
            left -= 1;
        }
    }
    for (c, q) in quota.iter_mut() {
        let room = cap(c) - *q;
        let add = room.min(left);
        *q += add;
        left -= add;
    }
    quota
}
