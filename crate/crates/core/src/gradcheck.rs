//! Central finite-difference verification of tape gradients.

use crate::error::{CoreError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error of one coordinate's finite-difference check, with
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordError {
    /// Index of the parameter tensor.
    pub param: usize,
    /// Flat index within the tensor.
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(CoreError::Argument(format!(
            "grad_check eps must lie in [1e-6, 1e-3], got {eps}"
        )));
    }
    Ok(())
}

/// Compares tape gradients of a scalar loss against central finite
/// differences `(f(p+eps) - f(p-eps)) / (2 eps)`, coordinate by
/// coordinate, and returns every coordinate's relative error.
///
/// `build_loss` must construct the loss on the given tape from leaves
/// registered in the same order as `params`; it is re-invoked on a fresh
/// tape for every perturbed evaluation.
pub fn grad_check_detailed<F>(params: &[Tensor], eps: f64, build_loss: F) -> Result<Vec<CoordError>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_eps(eps)?;

    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build_loss(&mut tape, &vars)?;
        tape.value(loss).item()
    };

    // Analytic gradients once, at the base point.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build_loss(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut out = Vec::new();
    let mut point: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for k in 0..param.len() {
            let base = param.values()[k];
            point[pi].values_mut()[k] = base + eps;
            let f_plus = eval(&point)?;
            point[pi].values_mut()[k] = base - eps;
            let f_minus = eval(&point)?;
            point[pi].values_mut()[k] = base;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[pi].values()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            out.push(CoordError {
                param: pi,
                coord: k,
                analytic: a,
                numeric,
                rel_error: (a - numeric).abs() / denom,
            });
        }
    }
    Ok(out)
}

/// Max relative error over all coordinates at one step size.
pub fn grad_check<F>(params: &[Tensor], eps: f64, build_loss: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(grad_check_detailed(params, eps, build_loss)?
        .into_iter()
        .map(|c| c.rel_error)
        .fold(0.0, f64::max))
}

/// Multi-scale check: a coordinate is certified when any step size in
/// `eps_grid` brings its finite difference within `tol` of the tape
/// gradient. A single step size misreports two kinds of coordinate: one
/// whose perturbation interval straddles a rectifier kink (the central
/// difference then measures a non-smooth segment until eps shrinks below
/// the kink distance) and one whose true gradient is zero (the difference
/// quotient is pure rounding noise, which grows as eps shrinks). A wrong
/// tape gradient fails every scale. Returns the max over coordinates of
/// the min over the grid of the relative error.
pub fn grad_check_multiscale<F>(params: &[Tensor], eps_grid: &[f64], build_loss: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps_grid.is_empty() {
        return Err(CoreError::Argument("empty eps grid".into()));
    }
    let mut best: Vec<f64> = Vec::new();
    for &eps in eps_grid {
        let coords = grad_check_detailed(params, eps, &build_loss)?;
        if best.is_empty() {
            best = coords.iter().map(|c| c.rel_error).collect();
        } else {
            for (b, c) in best.iter_mut().zip(&coords) {
                *b = b.min(c.rel_error);
            }
        }
    }
    Ok(best.into_iter().fold(0.0, f64::max))
}
