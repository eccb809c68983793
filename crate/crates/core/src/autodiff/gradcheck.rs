//! Central-difference gradient verification.

use super::{OpKind, Tape, Var};
use crate::tensor::{lit, Float, Tensor, TensorError};

/// Default magnitude floor of the relative-error denominator.
pub const DEFAULT_FLOOR: f64 = 1e-8;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floor(analytic, numeric, DEFAULT_FLOOR)
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Settings of a multi-input check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub eps: f64,
    /// Gradients below this magnitude are compared in absolute terms.
    pub floor: f64,
    /// Op whose backward pass is corrupted on the analytic tape.
    pub fault: Option<OpKind>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            eps: 1e-5,
            floor: DEFAULT_FLOOR,
            fault: None,
        }
    }
}

/// Worst coordinate found by a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            input: 0,
            index: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
        }
    }
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// fourth-order central differences with step `eps`, over every coordinate of `x`. Returns the
/// maximum relative error.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64, TensorError>
where
    T: Float,
    F: for<'t> Fn(&Var<'t, T>) -> Result<Var<'t, T>, TensorError>,
{
    let opts = CheckOptions {
        eps,
        ..CheckOptions::default()
    };
    let report = grad_check_multi(|vars| f(&vars[0]), std::slice::from_ref(x), |_, _| true, &opts)?;
    Ok(report.max_rel_error)
}

/// Multi-input gradient check. `select(input, index)` picks the coordinates
/// to probe.
pub fn grad_check_multi<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    select: impl Fn(usize, usize) -> bool,
    opts: &CheckOptions,
) -> Result<GradCheckReport, TensorError>
where
    T: Float,
    F: for<'t> Fn(&[Var<'t, T>]) -> Result<Var<'t, T>, TensorError>,
{
    let eps = opts.eps;
    if eps <= 0.0 {
        return Err(TensorError::contract("grad_check", "eps must be positive"));
    }
    let analytic: Vec<Tensor<T>> = {
        let tape = Tape::new();
        tape.inject_fault(opts.fault);
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&vars)?;
        let grads = tape.backward(&loss)?;
        vars.iter().map(|v| grads.get_or_zeros(v)).collect()
    };

    let eval = |probe: &[Tensor<T>]| -> Result<f64, TensorError> {
        let tape = Tape::no_grad();
        let vars: Vec<_> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&vars)?;
        if out.value().len() != 1 {
            return Err(TensorError::contract("grad_check", "function must be scalar"));
        }
        Ok(out.value().item().as_f64())
    };

    let mut report = GradCheckReport::empty();
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            if !select(i, j) {
                continue;
            }
            let orig = input.data()[j];
            let mut at = |h: f64| -> Result<f64, TensorError> {
                probe[i].data_mut()[j] = orig + lit(h);
                eval(&probe)
            };
            let (p1, m1, p2, m2) = (at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?);
            probe[i].data_mut()[j] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
            let a = analytic[i].data()[j].as_f64();
            let err = relative_error_floor(a, numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report = GradCheckReport {
                    max_rel_error: err.max(report.max_rel_error),
                    input: i,
                    index: j,
                    analytic: a,
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}
