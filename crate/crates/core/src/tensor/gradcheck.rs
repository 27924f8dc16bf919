use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|)` over every checked scalar.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    /// Number of scalar parameters compared.
    pub checked: usize,
}

/// Compares tape gradients of `f` against central finite differences.
///
/// `f` builds a scalar loss on the graph it is handed, binding parameters
/// from the store it is handed; it must be deterministic. Every scalar of
/// every tensor named in `names` is perturbed by `±eps`.
pub fn grad_check<F>(params: &ParamStore, names: &[String], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Argument(format!("finite-difference step {eps} must be positive")));
    }
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    check_finite(g.value(loss).item())?;
    let analytic = g.backward(loss)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(&mut g, store)?;
        let v = g.value(loss).item();
        check_finite(v)?;
        Ok(v)
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for name in names {
        let n = params.get(name)?.len();
        let grad = analytic
            .get(name)
            .ok_or_else(|| Error::Contract(format!("`{name}` is not bound by the function under test")))?
            .clone();
        for i in 0..n {
            let orig = work.get(name)?.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            report.checked += 1;
            if report.checked == 1 || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Evaluation(format!("function under test returned {v}")))
    }
}
