use super::tape::{Tape, Var};
use super::tensor::DiffTensor;
use crate::error::{domain_err, Result, ScafdsError};

/// Result of comparing tape gradients against central differences.
#[derive(Clone, Debug)]
pub struct FdReport {
    /// Largest relative error over the elements of each leaf, in leaf order.
    pub per_leaf: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Gradients smaller than this are compared in absolute rather than relative
/// terms; central differences cannot resolve relative error on values that
/// sit at the level of rounding noise.
const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Checks the tape gradient of a scalar function of `leaves` against
/// `(f(x+ε) - f(x-ε)) / 2ε` element by element.
///
/// `f` records its computation on the supplied tape using the leaf handles
/// it is given; it must return a scalar.
pub fn finite_diff_check<F>(f: F, leaves: &[DiffTensor], epsilon: f64, tol: f64) -> Result<FdReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(domain_err!("epsilon {epsilon} outside [1e-7, 1e-3]"));
    }
    let leaves: Vec<DiffTensor> = leaves.iter().map(|l| l.clone().with_requires_grad(true)).collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|l| tape.leaf(l)).collect();
    let out = f(&mut tape, &vars)?;
    let f0 = tape.scalar(out);
    if !f0.is_finite() {
        return Err(ScafdsError::Numeric(format!("function value {f0} is not finite")));
    }
    let grads = tape.backward(out)?;

    let eval_at = |tape: &mut Tape, leaf: usize, values: &[f64]| -> Result<f64> {
        tape.set_leaf_values(vars[leaf], values)?;
        tape.replay()?;
        let v = tape.scalar(out);
        if !v.is_finite() {
            return Err(ScafdsError::Numeric(format!("function value {v} is not finite")));
        }
        Ok(v)
    };

    let mut per_leaf = Vec::with_capacity(leaves.len());
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[li], leaf.len());
        let mut worst = 0.0f64;
        let mut x = leaf.values().to_vec();
        for k in 0..x.len() {
            let orig = x[k];
            x[k] = orig + epsilon;
            let fp = eval_at(&mut tape, li, &x)?;
            x[k] = orig - epsilon;
            let fm = eval_at(&mut tape, li, &x)?;
            x[k] = orig;
            let numeric = (fp - fm) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic[k], numeric));
        }
        tape.set_leaf_values(vars[li], &x)?;
        per_leaf.push(worst);
    }
    tape.replay()?;

    let max_rel_error = per_leaf.iter().cloned().fold(0.0, f64::max);
    Ok(FdReport {
        per_leaf,
        max_rel_error,
        tol,
    })
}
