use super::{loss_and_gradient, loss_only, AutogradError, Mode, Target, Tensor};
use crate::graph::{ComputationGraph, ParamLayout};

/// Analytic-versus-numeric comparison at one flat parameter coordinate.
#[derive(Clone, Debug)]
pub struct GradientCheck {
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Central differences `(f(x+h) − f(x−h)) / 2h` at the given flat coordinates
/// of [`ParamLayout::new`]. The relative error divides by
/// `max(|analytic|, |numeric|, floor · max(1, |f|))`: round-off in the two
/// loss evaluations is proportional to `|f|`, so gradients below that noise
/// level are compared on an absolute scale.
pub fn finite_difference_check(
    g: &ComputationGraph,
    inputs: &[Tensor],
    targets: &[Target],
    mode: Mode,
    coords: &[usize],
    h: f64,
    floor: f64,
) -> Result<Vec<GradientCheck>, AutogradError> {
    let layout = ParamLayout::new(g);
    let (f, grads, _) = loss_and_gradient(g, inputs, targets, mode)?;
    let analytic = grads.flatten(&layout);
    let base = layout.gather(g);
    let mut probe = g.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &coord in coords {
        let mut x = base.clone();
        x[coord] = base[coord] + h;
        layout.scatter(&mut probe, &x);
        let up = loss_only(&probe, inputs, targets, mode)?;
        x[coord] = base[coord] - h;
        layout.scatter(&mut probe, &x);
        let down = loss_only(&probe, inputs, targets, mode)?;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[coord];
        let rel_error =
            (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor * f.abs().max(1.0));
        out.push(GradientCheck {
            coord,
            analytic: a,
            numeric,
            rel_error,
        });
    }
    Ok(out)
}
