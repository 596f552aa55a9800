//! Central finite-difference verification of analytic gradients.

use super::{AutogradError, Graph, Tensor, Var};
use crate::exec::Execution;

/// Outcome of a gradient check over every coordinate of every input.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - b| / max(1e-8, |a| + |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compare autograd gradients of `f` at `inputs` against central differences with step `h`.
///
/// `f` receives a fresh graph and one tracked leaf per input, and must return a scalar.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport, AutogradError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutogradError> + Sync,
{
    grad_check_with(f, inputs, h, tol, Execution::default())
}

pub fn grad_check_with<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    tol: f64,
    exec: Execution,
) -> Result<GradCheckReport, AutogradError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutogradError> + Sync,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    let value = |xs: &[Tensor]| -> Result<f64, AutogradError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };
    compare_with_finite_differences(&analytic, value, inputs, h, tol, exec)
}

/// Finite-difference half of [`grad_check`]: checks externally supplied analytic
/// gradients against the scalar function `value`.
pub fn compare_with_finite_differences<V>(
    analytic: &[Vec<f64>],
    value: V,
    inputs: &[Tensor],
    h: f64,
    tol: f64,
    exec: Execution,
) -> Result<GradCheckReport, AutogradError>
where
    V: Fn(&[Tensor]) -> Result<f64, AutogradError> + Sync,
{
    let coords: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j))).collect();
    let errors = exec.map(coords.len(), |c| {
        let (i, j) = coords[c];
        let mut xs = inputs.to_vec();
        let x0 = xs[i].data()[j];
        xs[i].data_mut()[j] = x0 + h;
        let plus = value(&xs)?;
        xs[i].data_mut()[j] = x0 - h;
        let minus = value(&xs)?;
        let numeric = (plus - minus) / (2.0 * h);
        Ok::<_, AutogradError>(relative_error(analytic[i][j], numeric))
    });
    let mut max_rel_error = 0.0;
    let mut worst = None;
    for (c, e) in errors.into_iter().enumerate() {
        let e = e?;
        if e > max_rel_error || e.is_nan() {
            max_rel_error = e;
            worst = Some(coords[c]);
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        coordinates: coords.len(),
        tolerance: tol,
        passed: max_rel_error <= tol,
    })
}
