//! Central finite-difference checks for `f64` graphs.
//!
//! Only forward evaluations feed the numeric side, so it stays independent
//! of every backward rule it validates.

use super::{Graph, Result, Tensor, Var};

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Builds `f` over fresh variables holding `inputs`, returning the loss value.
fn eval<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    Ok(g.value(loss).item())
}

/// Analytic and numeric gradients of a scalar function for every input.
pub fn gradients<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<Vec<(Vec<f64>, Vec<f64>)>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;

    let mut out = Vec::with_capacity(inputs.len());
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = vec![0.0; inputs[k].len()];
        let mut probe = inputs.to_vec();
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let up = eval(&probe, &f)?;
            probe[k].data_mut()[i] = orig - eps;
            let down = eval(&probe, &f)?;
            probe[k].data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        out.push((analytic, numeric));
    }
    Ok(out)
}

/// Largest per-input relative error between analytic and numeric gradients.
pub fn max_relative_error<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    Ok(gradients(inputs, eps, f)?.iter().map(|(a, n)| relative_error(a, n)).fold(0.0, f64::max))
}
