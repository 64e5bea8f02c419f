use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::layers::Parameters;
use crate::nn::tensor::Tensor;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub worst: Option<GradCheckEntry>,
    pub failures: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Denominator floor for the relative error so that near-zero gradients are
/// compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `f` builds the graph from leaves bound to `inputs` and returns
/// the 1x1 output. `max_per_input` limits the coordinates probed per input
/// (evenly spaced); `None` probes all of them.
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    tolerance: f64,
    max_per_input: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out);
        if v.shape() != [1, 1] {
            return Err(Error::Shape(format!("grad check needs a scalar output, got {:?}", v.shape())));
        }
        Ok(v.item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        tolerance,
        worst: None,
        failures: Vec::new(),
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], input.shape());
        let n = input.len();
        let stride = match max_per_input {
            Some(m) if m > 0 && m < n => n.div_ceil(m),
            _ => 1,
        };
        for idx in (0..n).step_by(stride) {
            let orig = input.data()[idx];
            work[k].data_mut()[idx] = orig + h;
            let plus = eval(&work)?;
            work[k].data_mut()[idx] = orig - h;
            let minus = eval(&work)?;
            work[k].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[idx];
            let err = relative_error(a, numeric);
            let entry = GradCheckEntry {
                input: k,
                index: idx,
                analytic: a,
                numeric,
                relative_error: err,
            };
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some(entry.clone());
            }
            if err > tolerance || !err.is_finite() {
                report.failures.push(entry);
            }
        }
    }
    Ok(report)
}

/// Like [`grad_check`], but perturbs the tensors of a parameter set. `f`
/// binds `params` into the graph and returns the scalar output together with
/// the bound variables in `tensors_mut` order.
pub fn grad_check_params<P, F>(
    params: &P,
    f: F,
    h: f64,
    tolerance: f64,
    max_per_input: Option<usize>,
) -> Result<GradCheckReport>
where
    P: Parameters + Clone,
    F: Fn(&mut Graph, &P) -> Result<(Var, Vec<Var>)>,
{
    if !(h > 0.0) {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let eval = |p: &P| -> Result<f64> {
        let mut g = Graph::new();
        let (out, _) = f(&mut g, p)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let (out, vars) = f(&mut g, params)?;
    if g.shape(out) != [1, 1] {
        return Err(Error::Shape(format!("grad check needs a scalar output, got {:?}", g.shape(out))));
    }
    let grads = g.backward(out)?;
    let shapes: Vec<[usize; 2]> = params.named_tensors().iter().map(|(_, t)| t.shape()).collect();
    if shapes.len() != vars.len() {
        return Err(Error::Shape(format!("{} bound vars for {} tensors", vars.len(), shapes.len())));
    }
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        tolerance,
        worst: None,
        failures: Vec::new(),
    };
    let mut work = params.clone();
    for (k, shape) in shapes.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], *shape);
        let n = shape[0] * shape[1];
        let stride = match max_per_input {
            Some(m) if m > 0 && m < n => n.div_ceil(m),
            _ => 1,
        };
        for idx in (0..n).step_by(stride) {
            let orig = work.tensors_mut()[k].data()[idx];
            work.tensors_mut()[k].data_mut()[idx] = orig + h;
            let plus = eval(&work)?;
            work.tensors_mut()[k].data_mut()[idx] = orig - h;
            let minus = eval(&work)?;
            work.tensors_mut()[k].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[idx];
            let err = relative_error(a, numeric);
            let entry = GradCheckEntry {
                input: k,
                index: idx,
                analytic: a,
                numeric,
                relative_error: err,
            };
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some(entry.clone());
            }
            if err > tolerance || !err.is_finite() {
                report.failures.push(entry);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn smooth_ops_pass() {
        let mut r = rng::seeded(4);
        let a = Tensor::random_normal(3, 4, 1.0, &mut r);
        let b = Tensor::random_normal(4, 2, 1.0, &mut r);
        let report = grad_check(
            |g, v| {
                let m = g.matmul(v[0], v[1])?;
                let t = g.tanh(m);
                let s = g.sigmoid(t);
                let q = g.square(s);
                Ok(g.mean(q))
            },
            &[a, b],
            1e-5,
            1e-6,
            None,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 20);
    }

    #[test]
    fn detects_wrong_gradient() {
        // A constant sneaked in through the graph has no gradient, so a
        // function of it reports zero analytic gradient.
        let x = Tensor::from_vec(1, 1, vec![2.0]).unwrap();
        let report = grad_check(
            |g, v| {
                let detached = g.constant(g.value(v[0]).clone());
                Ok(g.square(detached))
            },
            &[x],
            1e-5,
            1e-6,
            None,
        )
        .unwrap();
        assert!(!report.passed());
    }
}
