use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub pass: bool,
    /// Number of coordinates compared.
    pub checked: usize,
    /// `(input, element)` coordinates skipped because the function has a
    /// kink there (one-sided slopes disagree).
    pub excluded: Vec<(usize, usize)>,
    /// Coordinate of the largest relative error.
    pub worst: Option<(usize, usize)>,
}

fn eval<F>(f: &F, point: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = point.iter().map(|t| tape.constant(t.clone())).collect();
    let y = f(&tape, &vars)?;
    let v = y.item();
    if !v.is_finite() {
        return Err(Error::Numeric { kernel: "grad_check" });
    }
    Ok(v)
}

/// Checks `f`'s tape gradient at `point` against central differences with
/// step `h`. Relative error per coordinate is `|a − n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(f: F, point: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<_> = point.iter().map(|t| tape.param(t.clone())).collect();
        let y = f(&tape, &vars)?;
        if !y.item().is_finite() {
            return Err(Error::Numeric { kernel: "grad_check" });
        }
        let grads = tape.backward(y)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };
    let f0 = eval(&f, point)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        pass: true,
        checked: 0,
        excluded: Vec::new(),
        worst: None,
    };
    let mut probe: Vec<Tensor> = point.to_vec();
    for (i, t) in point.iter().enumerate() {
        for j in 0..t.numel() {
            let x = t.data()[j];
            probe[i].data_mut()[j] = x + h;
            let fp = eval(&f, &probe)?;
            probe[i].data_mut()[j] = x - h;
            let fm = eval(&f, &probe)?;
            probe[i].data_mut()[j] = x;

            let right = (fp - f0) / h;
            let left = (f0 - fm) / h;
            if (right - left).abs() > 1e-3 * right.abs().max(left.abs()).max(1.0) {
                report.excluded.push((i, j));
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((i, j));
            }
        }
    }
    report.pass = report.max_rel_error < tol;
    Ok(report)
}
