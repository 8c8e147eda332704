use std::ops::Range;

/// Admissible range of a group's regularization coefficient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaInterval {
    /// `(λ_min, λ_max)`: any λ strictly inside keeps the update in both
    /// half-spaces (descent on `f` and on the group magnitude).
    Bounded { min: f64, max: f64 },
    /// `cos θ ≥ 0`: the negative gradient already shrinks the group.
    Unconstrained,
}

/// `(−cos θ·‖∇f‖, −‖∇f‖/cos θ)` when `cos θ < 0`.
pub fn lambda_interval(cos_theta: f64, grad_norm: f64) -> LambdaInterval {
    if cos_theta < 0.0 {
        LambdaInterval::Bounded {
            min: -cos_theta * grad_norm,
            max: -grad_norm / cos_theta,
        }
    } else {
        LambdaInterval::Unconstrained
    }
}

/// `Λ` when unconstrained, else `min(amplify·λ_min, λ_max)`.
pub fn select_lambda(cos_theta: f64, grad_norm: f64, amplify: f64, default_lambda: f64) -> f64 {
    match lambda_interval(cos_theta, grad_norm) {
        LambdaInterval::Unconstrained => default_lambda,
        LambdaInterval::Bounded { min, max } => (amplify * min).min(max),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64], ranges: &[Range<usize>]) -> f64 {
    ranges
        .iter()
        .flat_map(|r| r.clone())
        .map(|i| a[i] * b[i])
        .sum()
}

pub(crate) fn norm(a: &[f64], ranges: &[Range<usize>]) -> f64 {
    dot(a, a, ranges).sqrt()
}

/// `⟨x, g⟩ / (max(‖x‖, τ)·max(‖g‖, τ))`.
pub fn guarded_cos(x: &[f64], g: &[f64], ranges: &[Range<usize>], tau: f64) -> f64 {
    let c = dot(x, g, ranges) / (norm(x, ranges).max(tau) * norm(g, ranges).max(tau));
    c.clamp(-1.0, 1.0)
}
