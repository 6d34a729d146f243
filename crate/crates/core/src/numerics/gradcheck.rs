//! Central finite-difference validation of analytic gradients.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error for each parameter tensor.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

fn evaluate<T, F>(f: &F, params: &[Tensor<T>]) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item().as_f64())
}

/// Compares the tape gradient of scalar `f` against central differences for
/// every entry of every tensor in `params`.
///
/// `f` receives a fresh graph and one trainable leaf per parameter tensor and
/// must return a scalar node.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if !(1e-8..=1e-4).contains(&eps) {
        return Err(Error::Config(format!("grad_check eps {eps} outside [1e-8, 1e-4]")));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let base = g.value(out).item().as_f64();
    let again = evaluate(&f, params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Determinism {
            first: base,
            second: again,
        });
    }
    let grads = g.backward(out);

    let mut per_param = Vec::with_capacity(params.len());
    let mut analytic_all = Vec::with_capacity(params.len());
    let mut numeric_all = Vec::with_capacity(params.len());
    let mut work: Vec<Tensor<T>> = params.to_vec();
    for (pi, (&v, p)) in vars.iter().zip(params).enumerate() {
        let analytic = grads.get_or_zeros(v, p).to_f64_vec();
        let mut numeric = Vec::with_capacity(p.len());
        let mut worst = 0.0f64;
        for k in 0..p.len() {
            let orig = p.data()[k];
            work[pi].data_mut()[k] = T::lit(orig.as_f64() + eps);
            let up = evaluate(&f, &work)?;
            work[pi].data_mut()[k] = T::lit(orig.as_f64() - eps);
            let down = evaluate(&f, &work)?;
            work[pi].data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[k], fd));
            numeric.push(fd);
        }
        per_param.push(worst);
        analytic_all.push(analytic);
        numeric_all.push(numeric);
    }
    let max_rel_error = per_param.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
        analytic: analytic_all,
        numeric: numeric_all,
    })
}
