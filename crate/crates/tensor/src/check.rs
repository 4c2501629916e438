use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Largest elementwise `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

fn eval_scalar<T, F>(f: &mut F, x: Tensor<T>) -> Result<f64>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.leaf(x);
    let y = f(&mut g, xv)?;
    if g.value(y).len() != 1 {
        return Err(TensorError::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            g.shape(y)
        )));
    }
    Ok(g.value(y)[0].as_f64())
}

/// Compares the tape gradient of scalar `f` at `x` with central differences
/// `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` and returns the maximum relative
/// error over all coordinates.
pub fn grad_check<T, F>(mut f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(TensorError::Contract(format!("grad_check eps must be positive, got {eps}")));
    }
    let mut g = Graph::new();
    let xv = g.leaf(x.clone().with_requires_grad(true));
    let y = f(&mut g, xv)?;
    if g.value(y).len() != 1 {
        return Err(TensorError::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            g.shape(y)
        )));
    }
    g.backward(y)?;
    let analytic: Vec<f64> = match g.grad(xv) {
        Some(gr) => gr.iter().map(|v| v.as_f64()).collect(),
        None => vec![0.0; x.numel()],
    };
    let mut numeric = Vec::with_capacity(x.numel());
    let h = T::of_f64(eps);
    for i in 0..x.numel() {
        let mut xp = x.clone();
        xp.data_mut()[i] = xp.data()[i] + h;
        let mut xm = x.clone();
        xm.data_mut()[i] = xm.data()[i] - h;
        let fp = eval_scalar(&mut f, xp)?;
        let fm = eval_scalar(&mut f, xm)?;
        numeric.push((fp - fm) / (2.0 * eps));
    }
    Ok(max_relative_error(&analytic, &numeric))
}
