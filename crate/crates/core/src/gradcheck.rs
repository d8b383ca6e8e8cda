//! Central finite-difference check of tape gradients.

use crate::autodiff::{ParamSet, Tape, Var};
use crate::error::{Error, Result};

/// Worst disagreement found by [`finite_difference_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error with denominator `max(|a|, |b|, 1e-12)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Compares reverse-mode gradients of `f` against central differences
/// `(f(θ+h) − f(θ−h)) / 2h`, one scalar parameter at a time.
///
/// `f` builds a scalar loss on the given tape from the bound parameter vars.
/// `params` is restored to its original values on return.
pub fn finite_difference_check<F>(mut f: F, params: &mut ParamSet, h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Parameter(format!("step h must be positive, got {h}")));
    }

    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars = tape.bind_params(params);
        let loss = f(&mut tape, &vars)?;
        if !tape.scalar(loss).is_finite() {
            return Err(Error::Evaluation("objective is not finite".into()));
        }
        tape.backward(loss)?;
        vars.iter()
            .zip(params.iter())
            .map(|(v, (_, _, t))| {
                tape.grad(*v)
                    .map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec)
            })
            .collect()
    };

    let mut eval = |params: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = tape.bind_params(params);
        let loss = f(&mut tape, &vars)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Evaluation(format!("objective evaluated to {value}")));
        }
        Ok(value)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for i in 0..params.get(id).numel() {
            let original = params.get(id).values()[i];
            params.get_mut(id).values_mut()[i] = original + h;
            let plus = eval(params);
            params.get_mut(id).values_mut()[i] = original - h;
            let minus = eval(params);
            params.get_mut(id).values_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let a = analytic[id.index()][i];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = params.name(id).to_string();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
