//! Central-difference verification of tape gradients.

use std::collections::{BTreeMap, BTreeSet};

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{FimError, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// gradient is numerically zero are judged on absolute error.
    pub floor: f64,
    /// `(parameter, flat index)` coordinates that sit behind a stop-gradient.
    /// Their tape gradient is expected to differ from the finite difference.
    pub exempt: BTreeSet<(ParamId, usize)>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { h: 1e-5, floor: 1e-6, exempt: BTreeSet::new() }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamReport {
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Exempt coordinates, with the largest finite-difference magnitude seen
    /// there and the largest tape magnitude (which should be zero).
    pub exempt: usize,
    pub exempt_max_fd: f64,
    pub exempt_max_tape: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub params: BTreeMap<String, ParamReport>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Compares the tape gradient `analytic` of `loss` at `params` with central
/// differences `(loss(w+h) - loss(w-h)) / 2h`, coordinate by coordinate.
/// `params` is restored exactly before returning.
pub fn grad_check<F>(
    analytic: &Gradients,
    mut loss: F,
    params: &mut ParamStore,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&opts.h) {
        return Err(FimError::invalid(format!("finite-difference step {} outside [1e-7, 1e-3]", opts.h)));
    }
    let value = loss(params)?;
    if !value.is_finite() {
        return Err(FimError::NonFinite(format!("loss {value}")));
    }
    let mut report = GradCheckReport::default();
    for id in params.ids() {
        let name = params.name(id).to_string();
        let analytic = analytic.dense(id, params);
        let mut entry = ParamReport::default();
        for j in 0..analytic.len() {
            let original = params.get(id).data()[j];
            params.get_mut(id).data_mut()[j] = original + opts.h;
            let plus = loss(params);
            params.get_mut(id).data_mut()[j] = original - opts.h;
            let minus = loss(params);
            params.get_mut(id).data_mut()[j] = original;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(FimError::NonFinite(format!("loss at `{name}`[{j}]")));
            }
            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = analytic.data()[j];
            if opts.exempt.contains(&(id, j)) {
                entry.exempt += 1;
                entry.exempt_max_fd = entry.exempt_max_fd.max(numeric.abs());
                entry.exempt_max_tape = entry.exempt_max_tape.max(a.abs());
                continue;
            }
            entry.coordinates += 1;
            entry.max_abs_err = entry.max_abs_err.max((a - numeric).abs());
            entry.max_rel_err = entry.max_rel_err.max(relative_error(a, numeric, opts.floor));
        }
        report.max_rel_err = report.max_rel_err.max(entry.max_rel_err);
        report.params.insert(name, entry);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Tape, Tensor};

    fn check<F>(f: F, store: &mut ParamStore, opts: &GradCheckOptions) -> Result<GradCheckReport>
    where
        F: Fn(&ParamStore) -> Result<(f64, Gradients)>,
    {
        let (_, grads) = f(store)?;
        grad_check(&grads, |p| f(p).map(|r| r.0), store, opts)
    }

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::scalar(3.0)).unwrap();
        let report = check(
            |p| {
                let mut tape = Tape::new(p);
                let x = tape.param(w);
                let y = tape.square(x);
                let g = tape.backward(y)?;
                Ok((tape.value(y).item(), g))
            },
            &mut store,
            &GradCheckOptions::default(),
        )
        .unwrap();
        // analytic 6 and (3.00001^2 - 2.99999^2) / 2e-5 = 6 up to rounding
        assert!(report.max_rel_err < 1e-9, "{report:?}");
        assert_eq!(store.get(w).item(), 3.0);
    }

    #[test]
    fn stop_gradient_coordinates_are_exempted() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::row(vec![0.7, -1.2])).unwrap();
        let loss = |p: &ParamStore| {
            let mut tape = Tape::new(p);
            let x = tape.param(w);
            let s = tape.stop_gradient(x);
            let sq = tape.square(s);
            let y = tape.sum_all(sq);
            let g = tape.backward(y)?;
            Ok((tape.value(y).item(), g))
        };
        let strict = check(loss, &mut store, &GradCheckOptions::default()).unwrap();
        assert!(strict.max_rel_err > 0.5);
        let mut opts = GradCheckOptions::default();
        opts.exempt.extend([(w, 0), (w, 1)]);
        let lenient = check(loss, &mut store, &opts).unwrap();
        let entry = &lenient.params["w"];
        assert_eq!(entry.exempt, 2);
        assert_eq!(entry.exempt_max_tape, 0.0);
        assert!(entry.exempt_max_fd > 1.0);
        assert_eq!(lenient.max_rel_err, 0.0);
    }

    #[test]
    fn rejects_bad_step_and_nonfinite_loss() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0)).unwrap();
        let opts = GradCheckOptions { h: 1.0, ..Default::default() };
        let r = check(|p| Ok((0.0, Gradients::zeros_like(p))), &mut store, &opts);
        assert!(matches!(r, Err(FimError::InvalidArgument(_))));
        let r = grad_check(&Gradients::zeros_like(&store), |_| Ok(f64::NAN), &mut store, &Default::default());
        assert!(matches!(r, Err(FimError::NonFinite(_))));
    }
}
