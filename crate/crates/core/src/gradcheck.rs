//! Finite-difference verification of backward rules.
//!
//! Central differences `(f(θ+ε) − f(θ−ε)) / 2ε` are compared element-wise
//! against the gradients produced by a reverse sweep. The comparison is
//! relative, with denominator `max(|analytic|, |numeric|, 1e-8)`.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Parameters;

/// A scalar-valued differentiable function built on a fresh tape per call.
pub trait ScalarFn {
    fn eval(&self, params: &Parameters, tape: &mut Tape) -> Result<Var>;
}

impl<F> ScalarFn for F
where
    F: Fn(&Parameters, &mut Tape) -> Result<Var>,
{
    fn eval(&self, params: &Parameters, tape: &mut Tape) -> Result<Var> {
        self(params, tape)
    }
}

fn eval_scalar(f: &impl ScalarFn, params: &Parameters) -> Result<f64> {
    let mut tape = Tape::new();
    let out = f.eval(params, &mut tape)?;
    if tape.values(out).len() != 1 {
        return Err(Error::Dimension(format!(
            "grad_check target must be scalar, got shape {:?}",
            tape.shape(out)
        )));
    }
    let v = tape.values(out)[0];
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("objective value {v}")));
    }
    Ok(v)
}

/// Gradients of `f` for every parameter, by one reverse sweep.
pub fn analytic_gradients(f: &impl ScalarFn, params: &mut Parameters) -> Result<IndexMap<String, Vec<f64>>> {
    params.zero_grads();
    let mut tape = Tape::new();
    let out = f.eval(params, &mut tape)?;
    let v = tape.values(out)[0];
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("objective value {v}")));
    }
    tape.backward(out, params)?;
    Ok(params
        .iter()
        .map(|(name, t)| (name.to_string(), t.grad_or_zeros()))
        .collect())
}

/// Gradients of `f` for every parameter, by central finite differences.
pub fn numeric_gradients(
    f: &impl ScalarFn,
    params: &mut Parameters,
    epsilon: f64,
) -> Result<IndexMap<String, Vec<f64>>> {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut out = IndexMap::new();
    for name in names {
        let n = params.get(&name)?.numel();
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            let original = params.get(&name)?.values()[i];
            params.get_mut(&name)?.values_mut()[i] = original + epsilon;
            let plus = eval_scalar(f, params)?;
            params.get_mut(&name)?.values_mut()[i] = original - epsilon;
            let minus = eval_scalar(f, params)?;
            params.get_mut(&name)?.values_mut()[i] = original;
            grads.push((plus - minus) / (2.0 * epsilon));
        }
        out.insert(name, grads);
    }
    Ok(out)
}

/// Element-wise maximum of `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::Config(format!("grad_check epsilon {epsilon} outside (0, 1e-2]")));
    }
    Ok(())
}

/// Maximum relative error between backward gradients and finite differences,
/// over all elements of all parameters.
pub fn grad_check(f: &impl ScalarFn, params: &mut Parameters, epsilon: f64) -> Result<f64> {
    Ok(grad_check_by_param(f, params, epsilon)?
        .values()
        .fold(0.0, |acc, e| acc.max(*e)))
}

/// Per-parameter maximum relative error.
pub fn grad_check_by_param(
    f: &impl ScalarFn,
    params: &mut Parameters,
    epsilon: f64,
) -> Result<IndexMap<String, f64>> {
    check_epsilon(epsilon)?;
    let analytic = analytic_gradients(f, params)?;
    let numeric = numeric_gradients(f, params, epsilon)?;
    Ok(analytic
        .iter()
        .map(|(name, a)| (name.clone(), max_relative_error(a, &numeric[name])))
        .collect())
}
