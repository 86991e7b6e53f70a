//! Central finite-difference gradient checking.

use ndarray::Array2;

use super::params::{Ctx, ParamStore};
use super::tape::{Tape, Var};

/// Denominator floor for [`relative_error`], so components whose true
/// gradient is zero are judged on absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index (in check order) of the worst component.
    pub worst: usize,
    pub checked: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        GradCheckReport {
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst: 0,
            checked: 0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let rel = relative_error(analytic, numeric);
        let abs = (analytic - numeric).abs();
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = self.checked;
        }
        self.max_abs_err = self.max_abs_err.max(abs);
        self.checked += 1;
    }

    pub fn merge(mut self, other: &GradCheckReport) -> Self {
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = self.checked + other.worst;
        }
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.checked += other.checked;
        self
    }
}

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Checks the gradient of the scalar map `f` at `x0`.
///
/// `f` receives a fresh tape and the input as a variable on it and must
/// return a 1×1 node.
pub fn grad_check<F>(f: F, x0: &Array2<f64>, eps: f64) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    let tape = Tape::new();
    let x = tape.leaf(x0.clone());
    let y = f(&tape, x);
    let grads = tape.backward(y);
    let analytic = grads
        .get(x.id())
        .cloned()
        .unwrap_or_else(|| Array2::zeros(x0.dim()));

    let eval = |x: Array2<f64>| {
        let tape = Tape::inference();
        let v = tape.leaf(x);
        f(&tape, v).scalar()
    };
    let mut report = GradCheckReport::empty();
    for (idx, &a) in analytic.indexed_iter() {
        let mut plus = x0.clone();
        plus[idx] += eps;
        let mut minus = x0.clone();
        minus[idx] -= eps;
        let numeric = (eval(plus) - eval(minus)) / (2.0 * eps);
        report.record(a, numeric);
    }
    report
}

/// Checks gradients with respect to the named parameters of `store`.
pub fn grad_check_params<F>(store: &ParamStore, names: &[&str], f: F, eps: f64) -> GradCheckReport
where
    F: for<'t, 'p> Fn(&Ctx<'t, 'p>) -> Var<'t>,
{
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store);
    let y = f(&ctx);
    let grads = ctx.param_grads(&tape.backward(y));

    let eval = |s: &ParamStore| {
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, s);
        f(&ctx).scalar()
    };
    let mut report = GradCheckReport::empty();
    let mut work = store.clone();
    for name in names {
        let analytic = grads
            .get(*name)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(store.get(name).expect("param").dim()));
        for (idx, &a) in analytic.indexed_iter() {
            let orig = work.get(name).unwrap()[idx];
            work.get_mut(name).unwrap()[idx] = orig + eps;
            let fp = eval(&work);
            work.get_mut(name).unwrap()[idx] = orig - eps;
            let fm = eval(&work);
            work.get_mut(name).unwrap()[idx] = orig;
            report.record(a, (fp - fm) / (2.0 * eps));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_map_is_exact() {
        let w = array![[1.5, -2.0], [0.25, 4.0]];
        let report = grad_check(
            |tape, x| x.mul(tape.constant(w.clone())).unwrap().sum(),
            &array![[0.3, 0.1], [-0.7, 2.0]],
            1e-5,
        );
        assert!(report.max_rel_err < 1e-9, "{report:?}");
        assert_eq!(report.checked, 4);
    }

    #[test]
    fn relative_error_basics() {
        assert!(relative_error(1.0, 1.1) > 0.05);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }
}
