//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamId, ParamStore};

/// Step used by every check in this crate.
pub const DEFAULT_EPS: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// Analytic and numeric derivative at `worst_index`.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    pub fn offenders(&self, tolerance: f64) -> Vec<&ParamCheck> {
        self.params
            .iter()
            .filter(|p| p.max_rel_error >= tolerance)
            .collect()
    }
}

/// `|ad − fd| / max(1e-8, |ad| + |fd|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` for every
/// coordinate of the parameters in `ids`. `store` is restored before return.
pub fn finite_diff_gradcheck<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    analytic: &ParamGrads,
    eps: f64,
    mut f: F,
) -> Result<GradcheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut report = GradcheckReport::default();
    for &id in ids {
        let grad = analytic.get(id);
        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            coordinates: grad.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for k in 0..grad.len() {
            let original = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = original + eps;
            let plus = f(store);
            store.get_mut(id).data_mut()[k] = original - eps;
            let minus = f(store);
            store.get_mut(id).data_mut()[k] = original;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("objective while perturbing {}[{k}]", check.name)));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(grad.data()[k], numeric);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = k;
                check.worst_analytic = grad.data()[k];
                check.worst_numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn square_at_three() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![3.0]));
        let mut grads = ParamGrads::zeros_like(&store);
        grads.accumulate(x, &crate::params::Contribution::Dense(Tensor::vector(vec![6.0])));
        let report = finite_diff_gradcheck(&mut store, &[x], &grads, DEFAULT_EPS, |s| {
            Ok(s.get(x).item().powi(2))
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-9);
        assert_eq!(store.get(x).item(), 3.0);
    }

    #[test]
    fn rejects_non_positive_step() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![1.0]));
        let grads = ParamGrads::zeros_like(&store);
        assert!(finite_diff_gradcheck(&mut store, &[x], &grads, 0.0, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn non_finite_objective_propagates() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![1.0]));
        let grads = ParamGrads::zeros_like(&store);
        let r = finite_diff_gradcheck(&mut store, &[x], &grads, 1e-5, |_| Ok(f64::NAN));
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![3.0]));
        let mut tape = Tape::new();
        let v = tape.param(&store, x);
        let y = tape.mul(v, v).unwrap();
        let s = tape.sum(y);
        let mut grads = tape.param_grads(&store, &tape.backward(s).unwrap());
        grads.scale(1.1);
        let report = finite_diff_gradcheck(&mut store, &[x], &grads, DEFAULT_EPS, |s| {
            Ok(s.get(x).item().powi(2))
        })
        .unwrap();
        assert!(!report.passed(TOLERANCE));
    }
}
