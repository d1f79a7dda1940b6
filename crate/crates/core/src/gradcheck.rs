//! Central finite-difference verification of tape gradients.

use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};

pub const EPS_RANGE: (f64, f64) = (1e-7, 1e-3);

/// Worst relative error per named parameter tensor.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

/// `|a - c| / max(|a|, |c|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences for every entry of every parameter in `store`.
///
/// `make_tape` lets callers inject a faulty tape as a negative control.
pub fn finite_diff_check_with<F>(
    store: &mut ParamStore,
    eps: f64,
    make_tape: impl Fn() -> Tape,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &Bound) -> Result<Var>,
{
    if !(EPS_RANGE.0..=EPS_RANGE.1).contains(&eps) {
        return Err(Error::contract(format!(
            "finite-difference step {eps} outside [{}, {}]",
            EPS_RANGE.0, EPS_RANGE.1
        )));
    }
    let mut tape = make_tape();
    let bound = store.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    let value = tape.value(loss)[0];
    if !value.is_finite() {
        return Err(Error::Numeric(format!("objective is not finite: {value}")));
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = bound
        .vars()
        .iter()
        .zip(store.iter())
        .map(|(&v, (_, t))| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let loss = f(&mut tape, &bound)?;
        let v = tape.value(loss)[0];
        if !v.is_finite() {
            return Err(Error::Numeric(format!("objective is not finite: {v}")));
        }
        Ok(v)
    };

    let ids: Vec<_> = store.ids().collect();
    let mut per_param = Vec::with_capacity(ids.len());
    let mut overall: f64 = 0.0;
    for (pi, id) in ids.into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (j, &analytic_j) in analytic[pi].iter().enumerate() {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + eps;
            let plus = eval(store);
            store.get_mut(id).data_mut()[j] = orig - eps;
            let minus = eval(store);
            store.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            worst = worst.max(relative_error(analytic_j, numeric));
        }
        overall = overall.max(worst);
        per_param.push((store.name(id).to_string(), worst));
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error: overall,
    })
}

/// [`finite_diff_check_with`] on an ordinary tape.
pub fn finite_diff_check<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &Bound) -> Result<Var>,
{
    finite_diff_check_with(store, eps, Tape::new, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn linear_objective_is_exact() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::new(&[4], vec![0.3, -1.0, 2.5, 0.0]).unwrap());
        let report = finite_diff_check(&mut store, 1e-5, |tape, b| Ok(tape.sum(b.get(p)))).unwrap();
        assert!(report.max_rel_error < 1e-10, "{report:?}");
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(1.0));
        for eps in [1e-9, 1e-2] {
            let err = finite_diff_check(&mut store, eps, |tape, b| Ok(tape.sum(b.get(p))));
            assert!(matches!(err, Err(Error::Contract(_))));
        }
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(1.0));
        let err = finite_diff_check(&mut store, 1e-5, |tape, b| {
            let x = tape.scale(b.get(p), f64::INFINITY);
            Ok(tape.sum(x))
        });
        assert!(matches!(err, Err(Error::Numeric(_))));
    }
}
