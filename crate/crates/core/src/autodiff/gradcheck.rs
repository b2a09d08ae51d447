//! Central finite-difference checks for tape gradients.

use super::{AutodiffError, Tape, Tensor, Var};

/// Central-difference gradient of `f` with respect to `inputs[which]`.
pub fn numeric_gradient(f: impl Fn(&[Tensor]) -> f64, inputs: &[Tensor], which: usize, h: f64) -> Tensor {
    let mut work = inputs.to_vec();
    let mut out = Tensor::zeros(inputs[which].shape().to_vec());
    for i in 0..inputs[which].len() {
        let x = inputs[which].data()[i];
        work[which].data_mut()[i] = x + h;
        let up = f(&work);
        work[which].data_mut()[i] = x - h;
        let down = f(&work);
        work[which].data_mut()[i] = x;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// `|a - b| / max(|a| + |b|, tiny)` in the Euclidean norm.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = |t: &Tensor| t.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (norm(a) + norm(b)).max(1e-12)
}

/// Largest relative error between tape and finite-difference gradients over all inputs.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64, AutodiffError>
where
    F: for<'a> Fn(&'a Tape, &[Var<'a>]) -> Result<Var<'a>, AutodiffError>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let eval = |xs: &[Tensor]| {
        let t = Tape::new();
        let vs: Vec<Var<'_>> = xs.iter().map(|x| t.var(x.clone())).collect();
        f(&t, &vs).map(|v| v.item()).unwrap_or(f64::NAN)
    };
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let num = numeric_gradient(eval, inputs, i, h);
        let err = relative_error(&grads.wrt(*v), &num);
        worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
    }
    Ok(worst)
}
