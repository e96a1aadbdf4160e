//! Value-and-gradient evaluation of graph-building closures, and the
//! central finite-difference checker used to validate backward rules.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so that gradient entries that
/// are zero up to roundoff do not dominate the comparison.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

/// Builds a fresh graph with every input as a differentiable leaf, evaluates
/// `f` and returns the scalar output with one gradient per input.
pub fn value_and_grad<T, F>(f: F, inputs: &[Tensor<T>]) -> Result<(T, Vec<Tensor<T>>)>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let value = g.value(out).item().map_err(|_| {
        TensorError::Contract(format!(
            "graph output must be a scalar, got shape {:?}",
            g.shape(out)
        ))
    })?;
    let mut grads = g.backward(out)?;
    let grads = vars
        .iter()
        .map(|&v| grads.take(v).expect("leaf gradient"))
        .collect();
    Ok((value, grads))
}

fn forward<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out).item()?;
    if !v.is_finite() {
        return Err(TensorError::Numeric(format!("non-finite forward value {}", v)));
    }
    Ok(v)
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per input, spread evenly.
    pub max_coords_per_input: Option<usize>,
    /// Offsets the coordinate subset when sampling.
    pub offset: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_coords_per_input: None,
            offset: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(input, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Worst relative error between the analytic gradient and central
/// differences over every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let opts = GradCheckOptions {
        eps,
        ..Default::default()
    };
    Ok(grad_check_with(f, inputs, &opts)?.max_relative_error)
}

pub fn grad_check_with<F>(
    f: F,
    inputs: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&opts.eps) {
        return Err(TensorError::Contract(format!(
            "finite-difference step {} outside [1e-7, 1e-3]",
            opts.eps
        )));
    }
    if let Some(bad) = inputs.iter().position(|t| !t.all_finite()) {
        return Err(TensorError::Numeric(format!("input {} has non-finite values", bad)));
    }
    let (value, analytic) = value_and_grad(&f, inputs)?;
    if !value.is_finite() {
        return Err(TensorError::Numeric(format!("non-finite output {}", value)));
    }
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        let n = grad.numel();
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(limit) if limit < n => {
                let step = n as f64 / limit as f64;
                (0..limit)
                    .map(|i| ((i as f64 * step) as usize + opts.offset) % n)
                    .collect()
            }
            _ => (0..n).collect(),
        };
        for idx in coords {
            let orig = probe[which].data()[idx];
            probe[which].data_mut()[idx] = orig + opts.eps;
            let plus = forward(&f, &probe)?;
            probe[which].data_mut()[idx] = orig - opts.eps;
            let minus = forward(&f, &probe)?;
            probe[which].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = grad.data()[idx];
            if !a.is_finite() {
                return Err(TensorError::Numeric(format!(
                    "non-finite analytic gradient at input {} index {}",
                    which, idx
                )));
            }
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                if err >= report.max_relative_error {
                    report.worst = Some((which, idx, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
