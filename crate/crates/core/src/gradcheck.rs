//! Central-difference gradient verification.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Max relative error between reverse-mode and central-difference gradients of a
/// scalar function of one tensor.
pub fn check_gradient<F>(f: F, input: &Tensor<f64>) -> Result<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    check_gradients(|vars| f(vars[0]), std::slice::from_ref(input), None)
}

/// Like [`check_gradient`] for several inputs. With `max_coords`, at most that many
/// evenly strided coordinates of each input are perturbed.
pub fn check_gradients<F>(f: F, inputs: &[Tensor<f64>], max_coords: Option<usize>) -> Result<f64>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = values.iter().map(|v| tape.constant(v.clone())).collect();
        Ok(f(&vars)?.value()[0])
    };
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut work = inputs.to_vec();
    let mut worst = 0.0f64;
    for k in 0..inputs.len() {
        let n = inputs[k].len();
        let stride = match max_coords {
            Some(m) if m < n => n.div_ceil(m),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let x0 = inputs[k].data()[i];
            work[k].data_mut()[i] = x0 + FD_STEP;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = x0 - FD_STEP;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = x0;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[k].data()[i], numeric));
        }
    }
    Ok(worst)
}
