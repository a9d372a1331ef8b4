use std::collections::BTreeMap;

use super::{NumericsError, ParamStore, Tensor};

/// Largest disagreement between reverse-mode and central-difference
/// gradients, with the coordinate where it occurred.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    /// Coordinates left unchecked because the central difference never
    /// settled: a ReLU, max-pool or hard-sigmoid kink sits within every
    /// probed step.
    pub nonsmooth: usize,
}

/// Relative error below this magnitude is measured against it instead.
pub const ABS_FLOOR: f64 = 1e-6;

/// Agreement required between the differences at `ε` and `ε/2` before a
/// numeric derivative is trusted.
pub const STABILITY_TOL: f64 = 1e-3;

/// Each failed stability test shrinks the step by this factor, at most
/// `STEP_LADDER` times.
const STEP_SHRINK: f64 = 10.0;
const STEP_LADDER: usize = 3;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares the gradient returned by `f` against central differences
/// `(f(w+ε) − f(w−ε)) / 2ε` on every coordinate of every parameter.
///
/// A difference is used only when it agrees with the one at `ε/2`. When it
/// does not, the step shrinks tenfold (up to three times) so a nearby kink
/// drops out of the stencil; coordinates that never settle are counted in
/// `nonsmooth` and skipped.
pub fn finite_diff_check<F>(f: F, store: &ParamStore<f64>, epsilon: f64) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&ParamStore<f64>) -> Result<(f64, BTreeMap<String, Tensor<f64>>), NumericsError>,
{
    let (_, grads) = f(store)?;
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
        nonsmooth: 0,
    };
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let analytic = grads
            .get(&name)
            .ok_or_else(|| NumericsError::InvalidArgument(format!("no gradient for {name}")))?
            .clone();
        for i in 0..analytic.len() {
            let orig = store.get(&name).unwrap().data()[i];
            let mut central = |eps: f64| -> Result<f64, NumericsError> {
                probe.get_mut(&name).unwrap().data_mut()[i] = orig + eps;
                let (fp, _) = f(&probe)?;
                probe.get_mut(&name).unwrap().data_mut()[i] = orig - eps;
                let (fm, _) = f(&probe)?;
                probe.get_mut(&name).unwrap().data_mut()[i] = orig;
                Ok((fp - fm) / (2.0 * eps))
            };
            let mut numeric = None;
            let mut eps = epsilon;
            for _ in 0..STEP_LADDER {
                let d = central(eps)?;
                if rel_error(d, central(eps / 2.0)?) < STABILITY_TOL {
                    numeric = Some(d);
                    break;
                }
                eps /= STEP_SHRINK;
            }
            report.coordinates += 1;
            let Some(numeric) = numeric else {
                report.nonsmooth += 1;
                continue;
            };
            let a = analytic.data()[i];
            let err = rel_error(a, numeric);
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w));
        s
    }

    #[test]
    fn quadratic_at_three() {
        let f = |s: &ParamStore<f64>| {
            let w = s.get("w").unwrap().data()[0];
            let mut g = BTreeMap::new();
            g.insert("w".to_string(), Tensor::scalar(2.0 * w));
            Ok((w * w, g))
        };
        let r = finite_diff_check(f, &single(3.0), 1e-5).unwrap();
        assert!((r.numeric - 6.0).abs() < 1e-6);
        assert_eq!(r.analytic, 6.0);
    }

    #[test]
    fn linear_function_matches() {
        let f = |s: &ParamStore<f64>| {
            let w = s.get("w").unwrap().data()[0];
            let mut g = BTreeMap::new();
            g.insert("w".to_string(), Tensor::scalar(-2.5));
            Ok((-2.5 * w + 1.0, g))
        };
        let r = finite_diff_check(f, &single(0.4), 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let f = |s: &ParamStore<f64>| {
            let w = s.get("w").unwrap().data()[0];
            let mut g = BTreeMap::new();
            g.insert("w".to_string(), Tensor::scalar(w));
            Ok((w * w, g))
        };
        let r = finite_diff_check(f, &single(3.0), 1e-5).unwrap();
        assert!(r.max_rel_error > 0.4);
    }

    #[test]
    fn kink_inside_step_is_skipped_not_misreported() {
        // |w| probed 3e-6 from its kink: the 1e-5 stencil straddles it, the
        // 1e-6 one does not.
        let f = |s: &ParamStore<f64>| {
            let w = s.get("w").unwrap().data()[0];
            let mut g = BTreeMap::new();
            g.insert("w".to_string(), Tensor::scalar(w.signum()));
            Ok((w.abs(), g))
        };
        let r = finite_diff_check(f, &single(3e-6), 1e-5).unwrap();
        assert_eq!(r.nonsmooth, 0);
        assert!(r.max_rel_error < 1e-9);
        // Centred on the kink the stencil averages both slopes at every
        // step; that disagreement is reported, not hidden.
        let relu = |s: &ParamStore<f64>| {
            let w = s.get("w").unwrap().data()[0];
            let mut g = BTreeMap::new();
            g.insert("w".to_string(), Tensor::scalar(if w > 0.0 { 1.0 } else { 0.0 }));
            Ok((w.max(0.0), g))
        };
        let r = finite_diff_check(relu, &single(1e-12), 1e-5).unwrap();
        assert_eq!(r.nonsmooth, 0);
        assert!(r.max_rel_error > 0.4);
    }
}
