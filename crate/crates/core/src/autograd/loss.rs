use super::{AutogradError, Tensor};

/// Supervision for one graph output.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Class per sample (rank-2 logits) or per pixel in `n, h, w` order
    /// (rank-4 logits).
    CrossEntropy(Vec<usize>),
    /// Dense regression target with the output's layout; the loss is
    /// `1/(2N) Σ ‖y − t‖²`.
    MeanSquared(Vec<f64>),
}

impl Target {
    /// Loss value and its gradient with respect to `out`.
    pub fn evaluate(&self, out: &Tensor) -> Result<(f64, Vec<f64>), AutogradError> {
        match self {
            Target::CrossEntropy(labels) => cross_entropy(out, labels),
            Target::MeanSquared(t) => mean_squared(out, t),
        }
    }
}

fn mismatch(what: &str, expected: usize, found: usize) -> AutogradError {
    AutogradError::TargetMismatch(format!("{what}: expected {expected}, found {found}"))
}

fn cross_entropy(out: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>), AutogradError> {
    let shape = out.shape();
    let (n, c, plane) = (shape.batch(), shape.channels(), shape.plane());
    if labels.len() != n * plane {
        return Err(mismatch("cross-entropy labels", n * plane, labels.len()));
    }
    let x = out.data();
    let mut grad = vec![0.0; x.len()];
    let count = (n * plane) as f64;
    let mut loss = 0.0;
    let mut logits = vec![0.0; c];
    for s in 0..n {
        for p in 0..plane {
            let label = labels[s * plane + p];
            if label >= c {
                return Err(AutogradError::TargetMismatch(format!(
                    "label {label} out of range for {c} classes"
                )));
            }
            let at = |k: usize| (s * c + k) * plane + p;
            for (k, l) in logits.iter_mut().enumerate() {
                *l = x[at(k)];
            }
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
            let lse = m + z.ln();
            loss += lse - logits[label];
            for (k, &l) in logits.iter().enumerate() {
                grad[at(k)] = ((l - lse).exp() - if k == label { 1.0 } else { 0.0 }) / count;
            }
        }
    }
    Ok((loss / count, grad))
}

fn mean_squared(out: &Tensor, t: &[f64]) -> Result<(f64, Vec<f64>), AutogradError> {
    let y = out.data();
    if t.len() != y.len() {
        return Err(mismatch("regression target", y.len(), t.len()));
    }
    let n = out.batch() as f64;
    let mut loss = 0.0;
    let grad = y
        .iter()
        .zip(t)
        .map(|(a, b)| {
            let r = a - b;
            loss += r * r;
            r / n
        })
        .collect();
    Ok((loss / (2.0 * n), grad))
}
