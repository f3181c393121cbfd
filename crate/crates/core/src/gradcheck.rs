//! Central-difference verification of reverse-mode adjoints.

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::tensor::Tensor;

/// Check the adjoint of a scalar-valued graph function against central
/// differences at every coordinate of `x`.
///
/// `build` must construct the same computation each time it is called; it
/// receives a fresh graph and the id of the leaf holding (a perturbation of)
/// `x`, and returns the scalar output node. Returns the maximum over
/// coordinates of |analytic - central| / (|central| + 1e-8).
pub fn grad_check<F>(build: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, VarId) -> VarId,
{
    if step <= 0.0 {
        return Err(Error::arg("grad_check", "step must be positive"));
    }
    let mut g = Graph::new();
    let xv = g.input(x.clone(), true);
    let loss = build(&mut g, xv);
    let f0 = g.value(loss).value();
    if !f0.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    g.backward(loss)?;
    let analytic = g.adjoint(xv).unwrap().to_vec();

    let eval = |xt: &Tensor| -> f64 {
        let mut g = Graph::new();
        let xv = g.input(xt.clone(), false);
        let loss = build(&mut g, xv);
        g.value(loss).value()
    };
    compare_against_central_difference(&analytic, eval, x, step)
}

/// The raw comparison, for callers that already hold an analytic gradient
/// (including deliberately wrong ones, as a negative control).
pub fn grad_check_against<F>(analytic: &[f64], eval: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> f64,
{
    if step <= 0.0 {
        return Err(Error::arg("grad_check", "step must be positive"));
    }
    if !eval(x).is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    compare_against_central_difference(analytic, eval, x, step)
}

fn compare_against_central_difference<F>(
    analytic: &[f64],
    eval: F,
    x: &Tensor,
    step: f64,
) -> Result<f64>
where
    F: Fn(&Tensor) -> f64,
{
    assert_eq!(analytic.len(), x.numel());
    let mut max_rel = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let fp = eval(&probe);
        probe.data_mut()[i] = orig - step;
        let fm = eval(&probe);
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        let central = (fp - fm) / (2.0 * step);
        let rel = (analytic[i] - central).abs() / (central.abs() + 1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
