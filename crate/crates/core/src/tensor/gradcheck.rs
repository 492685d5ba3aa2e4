//! Central-difference gradient checking on the 64-bit shadow path.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// One evaluation of a scalar function for finite differencing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    /// Branch digest (see [`Tape::branch_signature`]); elements whose `+h`
    /// and `-h` evaluations disagree are excluded from the comparison.
    pub branch: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Elements whose finite-difference stencil crossed a kink.
    pub excluded: Vec<usize>,
    /// False when repeated evaluation at the same point disagreed.
    pub deterministic: bool,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.deterministic && self.max_rel_error < tol
    }
}

/// Denominator floor for the relative error, so vanishing gradients are
/// compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares `analytic` against central differences of `eval` at `x`.
///
/// `indices` restricts the check to selected flat elements (all when `None`).
pub fn check_against<F>(
    mut eval: F,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    step: f64,
    indices: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor<f64>) -> Result<Evaluation>,
{
    x.same_shape(analytic, "grad_check")?;
    let base = eval(x)?;
    let again = eval(x)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: None,
        checked: 0,
        excluded: Vec::new(),
        deterministic: base.value.to_bits() == again.value.to_bits() && base.branch == again.branch,
    };
    if !report.deterministic {
        return Ok(report);
    }

    let all: Vec<usize>;
    let indices = match indices {
        Some(i) => i,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };

    let mut probe = x.clone();
    for &i in indices {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;

        if plus.branch != base.branch || minus.branch != base.branch {
            report.excluded.push(i);
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * step);
        let a = analytic.data()[i];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}

/// Gradient check of a tape-built scalar function `f` with respect to `x`.
///
/// `f` must be deterministic; dropout has to be disabled inside it.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().with_requires_grad(true));
    let loss = f(&mut tape, xv)?;
    let grads = tape.backward(loss)?;
    let analytic = match grads.wrt(xv) {
        Some(g) => g.clone(),
        None => Tensor::zeros(x.shape())?,
    };
    check_against(
        |probe| {
            let mut tape = Tape::new();
            let v = tape.leaf(probe.clone());
            let out = f(&mut tape, v)?;
            Ok(Evaluation {
                value: tape.value(out).item()?,
                branch: tape.branch_signature(),
            })
        },
        x,
        &analytic,
        step,
        None,
    )
}
