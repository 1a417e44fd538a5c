use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Entries with `|analytic| + |numeric|` at or below this are skipped.
const SKIP_BELOW: f64 = 1e-8;

/// Compares the reverse-mode gradient of a scalar function against central
/// differences with step `eps`, over every entry of `x`.
///
/// `f` records the function on the given tape, starting from the input
/// variable, and returns the scalar output. Returns the largest relative
/// error `|a - n| / max(|a|, |n|)` over entries that are not negligible.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    grad_check_entries(f, x, eps, &all)
}

/// [`grad_check`] restricted to the listed flat entries of `x`.
pub fn grad_check_entries<F>(f: F, x: &Tensor, eps: f64, entries: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let input = tape.leaf(x.clone());
    let out = f(&mut tape, input)?;
    let analytic = tape.backward(out)?.tensor(input);

    let eval = |t: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let input = tape.constant(t);
        let out = f(&mut tape, input)?;
        let v = tape.value(out).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::numeric("function is not finite near the check point"))
        }
    };

    let mut worst: f64 = 0.0;
    for &i in entries {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        if !a.is_finite() {
            return Err(Error::numeric(format!("non-finite analytic gradient at entry {i}")));
        }
        if a.abs() + numeric.abs() <= SKIP_BELOW {
            continue;
        }
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()));
    }
    Ok(worst)
}
