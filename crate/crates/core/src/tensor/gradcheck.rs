//! Central finite-difference validation of tape gradients.

use super::{Bound, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `|analytic − numeric| / max(|analytic|, 1e-8)`.
pub fn relative_error<T: Real>(analytic: T, numeric: T) -> T {
    (analytic - numeric).abs() / analytic.abs().max(T::c(1e-8))
}

/// Maximum relative error between the tape gradient of a scalar function and
/// central differences with the given step.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, step: T) -> Result<T>
where
    T: Real,
    F: for<'t> Fn(&'t Tape<T>, Var<'t, T>) -> Result<Var<'t, T>>,
{
    if step <= T::zero() {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = f(&tape, xv)?;
    let analytic = tape.backward(y)?.wrt(xv);

    let eval = |p: &Tensor<T>| -> Result<T> {
        let t = Tape::no_grad();
        let v = t.constant(p.clone());
        Ok(f(&t, v)?.item())
    };
    let mut worst = T::zero();
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (step + step);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Same check over every entry of a parameter set.
pub fn grad_check_params<T, F>(f: F, params: &ParamSet<T>, step: T) -> Result<T>
where
    T: Real,
    F: for<'t> Fn(&'t Tape<T>, &Bound<'t, T>) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let y = f(&tape, &bound)?;
    let grads = tape.backward(y)?;
    let analytic: Vec<Tensor<T>> = bound.vars().iter().map(|&v| grads.wrt(v)).collect();

    let eval = |ps: &ParamSet<T>| -> Result<T> {
        let t = Tape::no_grad();
        let b = ps.bind(&t);
        Ok(f(&t, &b)?.item())
    };
    let mut probe = params.clone();
    let mut worst = T::zero();
    for (k, a) in analytic.iter().enumerate() {
        for i in 0..a.len() {
            let id = super::ParamId(k);
            let orig = probe.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (step + step);
            worst = worst.max(relative_error(a.data()[i], numeric));
        }
    }
    Ok(worst)
}
