//! Central finite-difference verification of analytic gradients (64-bit).

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares the analytic gradient of the scalar function `f` at `point` with
/// central differences. Returns the largest
/// `|analytic − numeric| / max(1, |numeric|)` over all coordinates.
///
/// `f` receives a fresh graph and the variable holding the point, and must
/// return a scalar node.
pub fn finite_diff_check<F>(f: F, point: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {h} must be positive")));
    }
    let mut graph = Graph::new();
    let x = graph.input(point.clone(), true);
    let loss = f(&mut graph, x)?;
    graph.backward(loss)?;
    let analytic = graph
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; point.numel()]);

    let mut probe = point.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = (a - numeric).abs() / numeric.abs().max(1.0);
        if !err.is_finite() {
            return Err(Error::NonFinite(format!("gradient check at coordinate {i}")));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

fn evaluate<F>(f: &F, point: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut graph = Graph::new();
    let x = graph.input(point.clone(), false);
    let out = f(&mut graph, x)?;
    let value = graph.value(out);
    if value.numel() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    Ok(value.data()[0])
}
