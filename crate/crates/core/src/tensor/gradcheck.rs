use super::{Tape, Tensor, Var};
use crate::error::{contract_err, Result};

/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compares tape gradients of a scalar function against central differences
/// over every coordinate of `theta`. Returns the worst relative error.
///
/// `f` receives a fresh tape and the leaf holding `theta` and must return a
/// scalar node. The perturbation for coordinate `i` is
/// `step · max(1, |θᵢ|)`.
pub fn grad_check<G>(theta: &Tensor<f64>, step: f64, f: G) -> Result<f64>
where
    G: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..theta.numel()).collect();
    grad_check_coords(theta, step, &coords, f)
}

/// [`grad_check`] restricted to the listed flat coordinates.
pub fn grad_check_coords<G>(theta: &Tensor<f64>, step: f64, coords: &[usize], f: G) -> Result<f64>
where
    G: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(contract_err!(
            "finite-difference step must be positive, got {}",
            step
        ));
    }
    let mut tape = Tape::new();
    let leaf = tape.leaf(theta.clone());
    let loss = f(&mut tape, leaf)?;
    let analytic = tape.backward(loss)?.wrt(&tape, leaf);

    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let leaf = tape.leaf(t);
        let out = f(&mut tape, leaf)?;
        Ok(tape.value(out).data()[0])
    };

    let mut worst = 0.0f64;
    for &i in coords {
        let base = theta.data()[i];
        let h = step * base.abs().max(1.0);
        let mut plus = theta.clone();
        plus.data_mut()[i] = base + h;
        let mut minus = theta.clone();
        minus.data_mut()[i] = base - h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}
