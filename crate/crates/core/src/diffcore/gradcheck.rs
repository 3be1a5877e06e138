use super::{ParamStore, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// Flat coordinate where the maximum occurred.
    pub worst_index: usize,
    pub coordinates: usize,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(invalid("grad_check", format!("epsilon {eps} outside [1e-7, 1e-4]")));
    }
    Ok(())
}

fn eval_scalar(tape: &mut Tape, out: Var, index: usize) -> Result<f64> {
    let v = tape.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite { index });
    }
    Ok(v)
}

/// Compares the tape gradient of `f` at `x` against central differences.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    check_eps(eps)?;
    let mut tape = Tape::new();
    let input = tape.input(x.clone());
    let out = f(&mut tape, input)?;
    eval_scalar(&mut tape, out, 0)?;
    let grads = tape.backward(out)?;
    let zero = Tensor::zeros(x.shape());
    let analytic = grads.of(input).unwrap_or(&zero).clone();

    let eval_at = |probe: Tensor, index: usize| -> Result<f64> {
        let mut tape = Tape::new();
        let input = tape.input(probe);
        let out = f(&mut tape, input)?;
        eval_scalar(&mut tape, out, index)
    };
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        coordinates: x.numel(),
    };
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval_at(plus, i)? - eval_at(minus, i)?) / (2.0 * eps);
        let err = relative_error(analytic.data()[i], numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Central-difference check of every parameter coordinate in `store`.
///
/// `f` builds the scalar objective from the store; the store itself is
/// cloned and perturbed, never modified.
pub fn grad_check_params<F>(store: &ParamStore, f: F, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    check_eps(eps)?;
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    eval_scalar(&mut tape, out, 0)?;
    let grads = tape.backward(out)?;

    let mut probe = store.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        coordinates: store.count(),
    };
    let mut flat = 0;
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.value(id).numel();
        for i in 0..n {
            let original = store.value(id).data()[i];
            let mut eval = |v: f64| -> Result<f64> {
                probe.get_mut(id).value.data_mut()[i] = v;
                let mut tape = Tape::new();
                let out = f(&mut tape, &probe)?;
                eval_scalar(&mut tape, out, flat)
            };
            let numeric = (eval(original + eps)? - eval(original - eps)?) / (2.0 * eps);
            probe.get_mut(id).value.data_mut()[i] = original;
            let analytic = grads.param(id).map_or(0.0, |g| g.data()[i]);
            let err = relative_error(analytic, numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_index = flat;
            }
            flat += 1;
        }
    }
    Ok(report)
}
