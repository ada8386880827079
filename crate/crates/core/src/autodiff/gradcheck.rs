//! Finite-difference validation of reverse-mode gradients.

use super::tape::{AutodiffError, Tape};
use super::tensor::Tensor;

/// Max relative disagreement between the reverse-mode gradient of `f` at
/// `point` and central differences with the given step:
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`, maximised over
/// coordinates. `f` must produce a scalar.
pub fn gradient_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor, AutodiffError>,
{
    let tape = Tape::new();
    let x = tape.watch(point);
    let y = f(&tape, &x)?;
    if y.len() != 1 {
        return Err(AutodiffError::RootNotScalar(y.shape().to_vec()));
    }
    let analytic = tape.backward(&y)?.wrt(&x)?;

    let eval = |p: &Tensor| -> Result<f64, AutodiffError> {
        let t = Tape::new();
        let xw = t.watch(p);
        Ok(f(&t, &xw)?.item())
    };

    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let mut plus = point.detached();
        plus.data_mut()[i] += step;
        let mut minus = point.detached();
        minus.data_mut()[i] -= step;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
