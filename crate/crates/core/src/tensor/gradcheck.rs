use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if !value.is_scalar() {
        return Err(Error::shape(format!(
            "grad_check function must return a scalar, got {:?}",
            value.shape()
        )));
    }
    let v = value.item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("grad_check function returned {v}")));
    }
    Ok(v)
}

/// Compare reverse-mode gradients of `f` at `inputs` with central finite
/// differences. Returns the worst relative error over every input
/// coordinate, using `max(|analytic|, |numeric|, 1e-8)` as denominator.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::arg(format!("grad_check eps must be in (0, 1e-3], got {eps}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if !v.is_scalar() {
        return Err(Error::shape(format!(
            "grad_check function must return a scalar, got {:?}",
            v.shape()
        )));
    }
    if !v.item().is_finite() {
        return Err(Error::NonFinite(format!("grad_check function returned {}", v.item())));
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&var, t)| {
            tape.grad(var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for idx in 0..probe[which].len() {
            let orig = probe[which].data()[idx];
            probe[which].data_mut()[idx] = orig + eps;
            let plus = evaluate(&f, &probe)?;
            probe[which].data_mut()[idx] = orig - eps;
            let minus = evaluate(&f, &probe)?;
            probe[which].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
