//! Central finite-difference gradient checking.

use super::{ensure_finite, Tape, Tensor};
use crate::error::{Error, Result};

/// Default probe step for 64-bit checks.
pub const GRADCHECK_EPS: f64 = 1e-5;

/// Compares the tape gradient of a scalar function against central finite
/// differences, returning the worst relative error
/// `|analytic - numeric| / max(1, |analytic|)` over all coordinates.
///
/// `f` must be deterministic; it is evaluated `2·len + 1` times.
pub fn gradient_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &Tensor) -> Result<Tensor>,
{
    if eps <= 0.0 {
        return Err(Error::Config(format!("gradient_check: eps {eps} must be positive")));
    }

    let mut tape = Tape::new();
    let watched = tape.watch(&x.clone().tracked());
    let out = f(&mut tape, &watched)?;
    if out.len() != 1 {
        return Err(Error::Config(format!(
            "gradient_check: f must return a scalar, got shape {:?}",
            out.shape()
        )));
    }
    ensure_finite(out.data(), "gradient_check f(x)")?;
    let grads = tape.backward(&out)?;
    let analytic = grads
        .wrt(&watched)
        .ok_or_else(|| Error::Numeric("gradient_check: no gradient reached x".into()))?
        .to_vec();

    let probe = |values: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let watched = tape.watch(values);
        let out = f(&mut tape, &watched)?;
        let v = out.item();
        if !v.is_finite() {
            return Err(Error::Numeric(
                "gradient_check: f non-finite at probe point".into(),
            ));
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (probe(&plus)? - probe(&minus)?) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_checks_to_machine_precision() {
        let x = Tensor::from_vec(vec![5], vec![0.3, -1.2, 2.0, 0.0, 4.4]).unwrap();
        let err = gradient_check(|t, x| Ok(t.sum(x)), &x, GRADCHECK_EPS).unwrap();
        assert!(err <= 1e-10, "sum gradcheck error {err}");
    }

    #[test]
    fn sum_of_squares_checks_tightly() {
        let x = Tensor::from_vec(vec![4], vec![0.5, -0.25, 1.5, -2.0]).unwrap();
        let err = gradient_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                Ok(t.sum(&sq))
            },
            &x,
            GRADCHECK_EPS,
        )
        .unwrap();
        assert!(err <= 1e-8, "sum-of-squares gradcheck error {err}");
    }

    #[test]
    fn rejects_non_positive_eps() {
        let x = Tensor::scalar(1.0);
        assert!(gradient_check(|t, x| Ok(t.sum(x)), &x, 0.0).is_err());
    }
}
